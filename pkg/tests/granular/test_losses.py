import warnings

import numpy as np
import pytest

from dense_pose_aggregation.errors import AtMinimumWarning, EmptyModel  # noqa
from dense_pose_aggregation.geometry import quat_from_axis_angle, quat_multiply, quat_to_rotmat  # noqa
from dense_pose_aggregation.losses import (DEFAULT_QLOSS_EPSILON, LossWeights, combined_loss, grad_ploss,  # noqa
                                           grad_qloss, grad_sloss, l2_quaternion_map, nll_segmentation, ploss,
                                           project_to_tangent, qloss, qloss_map, sloss, sloss_matches, smloss,
                                           translation_l2)
from dense_pose_aggregation.structures import PointModel  # noqa
from dense_pose_aggregation.synth import make_model  # noqa

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def random_unit(rng):
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def finite_difference(function, q, step=1e-6, on_sphere=False):
    gradient = np.zeros(4)
    for index in range(4):
        offset = np.zeros(4)
        offset[index] = step
        forward, backward = q + offset, q - offset
        if on_sphere:
            forward, backward = forward / np.linalg.norm(forward), backward / np.linalg.norm(backward)
        gradient[index] = (function(forward) - function(backward)) / (2 * step)
    return gradient


def brute_force_sloss(q_tilde, q, points):
    predicted = points @ quat_to_rotmat(q_tilde).T
    target = points @ quat_to_rotmat(q).T
    total = 0.0
    for x in predicted:
        total += min(float(np.sum((x - y) ** 2)) for y in target)
    return total / (2 * len(points))


### QLoss

def test_given_identical_quaternions_when_qloss_computed_then_return_log_epsilon():
    # given, when
    loss = qloss(IDENTITY, IDENTITY)

    # then
    assert loss == pytest.approx(np.log(DEFAULT_QLOSS_EPSILON), abs=1e-12), \
        "Didn't return log(epsilon) at the minimum"


def test_given_orthogonal_quaternions_when_qloss_computed_then_return_log_one_plus_epsilon():
    # given, when
    loss = qloss(IDENTITY, [0.0, 1.0, 0.0, 0.0])

    # then
    assert loss == pytest.approx(np.log(1.0 + DEFAULT_QLOSS_EPSILON), abs=1e-12), \
        "Didn't return log(1 + epsilon) for a half turn"


def test_given_a_negated_prediction_when_qloss_computed_then_loss_does_not_change():
    # given
    rng = np.random.default_rng(0)
    q_bar, q = random_unit(rng), random_unit(rng)

    # when, then
    assert qloss(q_bar, q) == qloss(-q_bar, q), \
        "Didn't treat q and -q as the same rotation"


def test_given_random_pairs_when_qloss_gradient_computed_then_match_finite_differences():
    # given
    rng = np.random.default_rng(1)
    for _ in range(100):
        q_bar, q = random_unit(rng), random_unit(rng)
        if abs(q_bar @ q) > 1 - 1e-3:
            continue

        # when
        analytic = grad_qloss(q_bar, q)

        # then
        numeric = finite_difference(lambda each: qloss(each, q), q_bar)
        assert np.linalg.norm(analytic - numeric) < 1e-4 * np.linalg.norm(numeric), \
            "Didn't match the finite-difference gradient"


def test_given_the_minimum_when_qloss_gradient_computed_then_warn_and_return_zero():
    # given, when
    with pytest.warns(AtMinimumWarning):
        gradient = grad_qloss(IDENTITY, IDENTITY)

    # then
    assert np.array_equal(gradient, np.zeros(4)), \
        "Didn't return a zero gradient at the minimum"


def test_given_quaternion_planes_when_qloss_map_computed_then_background_is_nan():
    # given
    predicted = np.zeros((4, 2, 2))
    predicted[0] = 2.0
    target = np.zeros((4, 2, 2))
    target[0] = 1.0
    mask = np.array([[True, False], [False, True]])

    # when
    losses = qloss_map(predicted, target, mask)

    # then
    assert np.isnan(losses[0, 1]) and np.isnan(losses[1, 0]), \
        "Didn't leave background pixels undefined"
    assert losses[0, 0] == pytest.approx(np.log(DEFAULT_QLOSS_EPSILON)), \
        "Didn't normalise the prediction before comparing"


def test_given_quaternion_planes_when_l2_map_computed_then_return_squared_distances_on_the_mask():
    # given
    predicted = np.zeros((4, 2, 2))
    predicted[0] = 2.0
    predicted[1, 1, 1] = 1.0
    target = np.zeros((4, 2, 2))
    target[0] = 1.0
    mask = np.array([[True, False], [False, True]])

    # when
    losses = l2_quaternion_map(predicted, target, mask)

    # then
    assert np.isnan(losses[0, 1]) and np.isnan(losses[1, 0]), \
        "Didn't leave background pixels undefined"
    assert (losses[0, 0], losses[1, 1]) == (1.0, 2.0), \
        "Didn't compare the raw, unnormalised predictions"


### PLoss / SLoss / SMLoss

def test_given_the_same_rotation_when_ploss_computed_then_return_zero():
    # given
    model = make_model('box', {'size': 0.1}, 8)

    # when, then
    assert ploss(IDENTITY, IDENTITY, model) == 0.0, \
        "Didn't return zero for the ground truth rotation"


def test_given_a_half_turn_of_a_single_point_when_ploss_computed_then_return_the_squared_chord_over_two():
    # given
    model = PointModel([[1.0, 0.0, 0.0]])
    half_turn = quat_from_axis_angle([0.0, 0.0, 1.0], np.pi)

    # when
    loss = ploss(half_turn, IDENTITY, model)

    # then
    assert loss == pytest.approx(2.0, abs=1e-12), \
        "Didn't return ||(-1,0,0) - (1,0,0)||^2 / 2"


def test_given_a_common_rotation_when_ploss_computed_then_loss_does_not_change():
    # given
    rng = np.random.default_rng(8)
    model = PointModel(rng.normal(0.0, 0.05, (200, 3)))

    for _ in range(20):
        q_tilde, q, common = random_unit(rng), random_unit(rng), random_unit(rng)
        rotated_model = PointModel(model.points @ quat_to_rotmat(common).T)

        # when
        reference = ploss(q_tilde, q, model)
        from_the_left = ploss(quat_multiply(common, q_tilde), quat_multiply(common, q), model)
        from_the_right = ploss(quat_multiply(q_tilde, common), quat_multiply(q, common), model)

        # then
        assert from_the_left == pytest.approx(reference, abs=1e-9), \
            "Didn't ignore a rotation applied to both poses"
        assert from_the_right == pytest.approx(ploss(q_tilde, q, rotated_model), abs=1e-9), \
            "Didn't match rotating the model points instead"


def test_given_random_instances_when_sloss_computed_then_it_never_exceeds_ploss():
    # given
    rng = np.random.default_rng(2)
    model = make_model('box', {'size': (0.08, 0.12, 0.05)}, 100, seed=1)
    for _ in range(30):
        q_tilde, q = random_unit(rng), random_unit(rng)

        # when, then
        assert sloss(q_tilde, q, model) <= ploss(q_tilde, q, model), \
            "Didn't bound SLoss by PLoss"


def test_given_random_instances_when_sloss_computed_then_match_the_brute_force_definition():
    # given
    rng = np.random.default_rng(3)
    model = make_model('box', {'size': 0.1}, 40, seed=2)
    q_tilde, q = random_unit(rng), random_unit(rng)

    # when
    loss = sloss(q_tilde, q, model)

    # then
    assert loss == pytest.approx(brute_force_sloss(q_tilde, q, model.points), rel=1e-9), \
        "Didn't match the double loop over all point pairs"


def test_given_a_ring_rotated_by_its_symmetry_when_losses_computed_then_only_ploss_penalises_it():
    # given
    radius, count = 0.05, 360
    model = make_model('ring', {'radius': radius}, count)
    rotated = quat_from_axis_angle([0.0, 0.0, 1.0], np.radians(37.3))
    chord_gap = (2 * radius * np.sin(np.pi / count)) ** 2 / 2

    # when
    symmetric_loss = sloss(rotated, IDENTITY, model)
    plain_loss = ploss(rotated, IDENTITY, model)

    # then
    assert symmetric_loss <= chord_gap, \
        "Didn't forgive a rotation about the ring's symmetry axis"
    assert plain_loss >= 10 * chord_gap, \
        "Didn't penalise the rotation with PLoss"


def test_given_symmetric_and_plain_models_when_smloss_computed_then_dispatch_on_symmetry():
    # given
    rng = np.random.default_rng(4)
    q_tilde, q = random_unit(rng), random_unit(rng)
    ring = make_model('ring', {'radius': 0.05}, 90)
    box = make_model('box', {'size': 0.1}, 8)

    # when, then
    assert smloss(q_tilde, q, ring) == sloss(q_tilde, q, ring), \
        "Didn't use SLoss for a symmetric model"
    assert smloss(q_tilde, q, box) == ploss(q_tilde, q, box), \
        "Didn't use PLoss for a non-symmetric model"


def test_given_random_instances_when_ploss_gradient_computed_then_match_finite_differences_on_the_sphere():
    # given
    rng = np.random.default_rng(5)
    model = make_model('box', {'size': (0.08, 0.12, 0.05)}, 60, seed=3)
    for _ in range(50):
        q_tilde, q = random_unit(rng), random_unit(rng)

        # when
        analytic = project_to_tangent(q_tilde, grad_ploss(q_tilde, q, model))

        # then
        numeric = finite_difference(lambda each: ploss(each, q, model), q_tilde, on_sphere=True)
        assert np.linalg.norm(analytic - numeric) < 1e-4 * max(np.linalg.norm(numeric), 1e-8), \
            "Didn't match the finite-difference gradient on the unit sphere"


def test_given_stable_correspondences_when_sloss_gradient_computed_then_match_finite_differences():
    # given
    rng = np.random.default_rng(7)
    model = make_model('box', {'size': (0.08, 0.12, 0.05)}, 60, seed=5)
    checked = 0
    for _ in range(30):
        q_tilde, q = random_unit(rng), random_unit(rng)
        matches = sloss_matches(q_tilde, q, model)
        nearby = [q_tilde + step for step in 1e-6 * np.vstack([np.eye(4), -np.eye(4)])]
        if any(not np.array_equal(sloss_matches(each, q, model), matches) for each in nearby):
            continue

        # when
        analytic = project_to_tangent(q_tilde, grad_sloss(q_tilde, q, model))

        # then
        numeric = finite_difference(lambda each: sloss(each, q, model), q_tilde, on_sphere=True)
        assert np.linalg.norm(analytic - numeric) < 1e-4 * max(np.linalg.norm(numeric), 1e-8), \
            "Didn't match the finite-difference gradient with fixed correspondences"
        checked += 1
    assert checked >= 10, \
        "Didn't find enough instances away from correspondence switches"


def test_given_an_empty_model_when_ploss_computed_then_raise_empty_model():
    # given, when, then
    with pytest.raises(EmptyModel):
        ploss(IDENTITY, IDENTITY, np.zeros((0, 3)))


### Segmentation, translation and combined loss

def test_given_perfect_scores_when_nll_computed_then_return_zero():
    # given
    scores = np.zeros((2, 2, 2))
    scores[0] = 1.0
    labels = np.zeros((2, 2), dtype=int)

    # when, then
    assert nll_segmentation(scores, labels) == 0.0, \
        "Didn't return zero for certain correct scores"


def test_given_uniform_scores_when_nll_computed_then_return_log_of_class_count():
    # given
    scores = np.full((4, 3, 3), 0.25)
    labels = np.arange(9).reshape(3, 3) % 4

    # when, then
    assert nll_segmentation(scores, labels) == pytest.approx(np.log(4.0)), \
        "Didn't return log(C) for uniform scores"


def test_given_a_depth_error_when_translation_loss_computed_then_scale_the_depth_term():
    # given
    directions = np.zeros((2, 1, 2))
    mask = np.ones((1, 2), dtype=bool)

    # when
    loss = translation_l2(directions, directions, np.full((1, 2), 1.1), np.ones((1, 2)), mask)

    # then
    assert loss == pytest.approx(100.0 * 0.01), \
        "Didn't multiply the squared depth error by 100"


def test_given_a_rotation_loss_name_when_weights_chosen_then_shape_matching_losses_get_100():
    # given, when
    weights = [LossWeights.for_rotation_loss(each).alpha_rot for each in ('l2', 'qloss', 'smloss', 'ploss')]

    # then
    assert weights == [1.0, 1.0, 100.0, 100.0], \
        "Didn't pick the rotation loss weights"


def test_given_three_loss_terms_when_combined_then_return_their_weighted_sum():
    # given
    weights = LossWeights(alpha_seg=1.0, alpha_trans=2.0, alpha_rot=100.0)

    # when
    total = combined_loss(0.5, 0.25, 0.01, weights)

    # then
    assert total == pytest.approx(0.5 + 0.5 + 1.0), \
        "Didn't weight and add the loss terms"


def test_given_no_warning_filter_when_qloss_gradient_away_from_minimum_then_nothing_is_emitted():
    # given
    rng = np.random.default_rng(6)
    q_bar, q = random_unit(rng), random_unit(rng)

    # when
    with warnings.catch_warnings():
        warnings.simplefilter('error', AtMinimumWarning)
        gradient = grad_qloss(q_bar, q)

    # then
    assert np.all(np.isfinite(gradient)), \
        "Didn't return a finite gradient"
