import numpy as np
import pytest

from dense_pose_aggregation.errors import ClassMismatch, EmptyDistances, MissingModel  # noqa
from dense_pose_aggregation.geometry import quat_from_axis_angle  # noqa
from dense_pose_aggregation.metrics import (accuracy_curve, add_metric, adds_metric, auc,  # noqa
                                            evaluate_scene_set, match_instances, rotation_error,
                                            segmentation_iou, translation_error)
from dense_pose_aggregation.structures import PoseEstimate  # noqa
from dense_pose_aggregation.synth import make_model  # noqa

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def pose(class_id, t, q=IDENTITY, confidence=1.0, scene_id=0):
    return PoseEstimate(class_id, q, t, confidence, scene_id)


### ADD / ADD-S

def test_given_identical_poses_when_add_computed_then_return_zero():
    # given
    model = make_model('box', {'size': 0.1}, 8)

    # when, then
    assert add_metric(pose(1, [0, 0, 1]), pose(1, [0, 0, 1]), model) == 0.0, \
        "Didn't return zero for the ground truth pose"


def test_given_a_translated_prediction_when_add_computed_then_return_the_offset():
    # given
    model = make_model('box', {'size': 0.1}, 8)

    # when
    distance = add_metric(pose(1, [0.03, 0.0, 1.04]), pose(1, [0.0, 0.0, 1.0]), model)

    # then
    assert distance == pytest.approx(0.05), \
        "Didn't return the length of the translation offset"


def test_given_random_rotations_when_adds_computed_then_it_never_exceeds_add():
    # given
    rng = np.random.default_rng(0)
    model = make_model('box', {'size': (0.08, 0.12, 0.05)}, 200, seed=4)
    for _ in range(20):
        q = rng.standard_normal(4)
        predicted, truth = pose(1, [0.0, 0.01, 1.0], q / np.linalg.norm(q)), pose(1, [0, 0, 1])

        # when, then
        assert adds_metric(predicted, truth, model) <= add_metric(predicted, truth, model), \
            "Didn't bound ADD-S by ADD"


def test_given_a_ring_turned_about_its_axis_when_scored_then_only_add_sees_an_error():
    # given
    model = make_model('ring', {'radius': 0.05}, 720)
    turned = pose(1, [0, 0, 1], quat_from_axis_angle([0.0, 0.0, 1.0], np.radians(90.25)))
    truth = pose(1, [0, 0, 1])

    # when
    plain, symmetric = add_metric(turned, truth, model), adds_metric(turned, truth, model)

    # then
    assert symmetric < 1e-3, \
        "Didn't match each point to its nearest neighbour"
    assert plain > 0.05, \
        "Didn't compare corresponding points"


def test_given_poses_of_different_classes_when_scored_then_raise_class_mismatch():
    # given
    model = make_model('box', {'size': 0.1}, 8)

    # when, then
    with pytest.raises(ClassMismatch):
        add_metric(pose(1, [0, 0, 1]), pose(2, [0, 0, 1]), model)


def test_given_two_poses_when_errors_computed_then_split_translation_and_rotation():
    # given
    predicted = pose(1, [0.0, 0.3, 1.4], quat_from_axis_angle([1.0, 0.0, 0.0], 0.2))

    # when
    errors = translation_error(predicted, pose(1, [0, 0, 1])), rotation_error(predicted, pose(1, [0, 0, 1]))

    # then
    assert errors == (pytest.approx(0.5), pytest.approx(0.2)), \
        "Didn't return the translation distance and the rotation angle"


### Accuracy curve and AUC

def test_given_distances_when_accuracy_curve_computed_then_count_strictly_smaller_distances():
    # given
    distances = [0.01, 0.05, 0.2]

    # when
    curve = accuracy_curve(distances, [0.01, 0.02, 0.06, 1.0])

    # then
    assert curve.tolist() == pytest.approx([0.0, 1 / 3, 2 / 3, 1.0]), \
        "Didn't return the fraction of distances below each threshold"


def test_given_descending_thresholds_when_accuracy_curve_computed_then_raise_value_error():
    # given, when, then
    with pytest.raises(ValueError):
        accuracy_curve([0.1], [0.2, 0.1])


@pytest.mark.parametrize("distances,expected", [
    ([0.0, 0.0], 100.0),
    ([0.05], 50.0),
    ([0.025], 75.0),
    ([0.1, 0.3], 0.0),
    ([0.0, np.inf], 50.0),
    ([0.025, 0.075], 50.0),
])
def test_given_distances_when_auc_computed_then_return_the_area_under_the_step_curve(distances, expected):
    # given, when
    area = auc(distances, max_threshold=0.1)

    # then
    assert area == pytest.approx(expected), \
        f"Didn't return {expected} for distances {distances}"


def test_given_no_distances_when_auc_computed_then_raise_empty_distances():
    # given, when, then
    with pytest.raises(EmptyDistances):
        auc([])


def test_given_a_non_positive_threshold_when_auc_computed_then_raise_value_error():
    # given, when, then
    with pytest.raises(ValueError):
        auc([0.1], max_threshold=0.0)


def test_given_random_distances_when_auc_computed_then_match_a_fine_riemann_sum():
    # given
    distances = np.random.default_rng(1).exponential(0.04, 300)
    thresholds = np.linspace(0.0, 0.1, 20_001)

    # when
    area = auc(distances)

    # then
    riemann = 100.0 * np.mean(accuracy_curve(distances, thresholds[1:]))
    assert area == pytest.approx(riemann, abs=1e-2), \
        "Didn't integrate the accuracy curve"


### Segmentation

def test_given_two_label_maps_when_iou_computed_then_return_per_class_and_mean_iou():
    # given
    predicted = np.array([[0, 1, 1], [2, 2, 0]])
    truth = np.array([[0, 1, 0], [2, 2, 2]])

    # when
    class_one, mean = segmentation_iou(predicted, truth, 1), segmentation_iou(predicted, truth)

    # then
    assert class_one == pytest.approx(0.5), \
        "Didn't divide the intersection by the union"
    assert mean == pytest.approx((0.5 + 2 / 3) / 2), \
        "Didn't average over the foreground classes"


### Matching and scene-set evaluation

def test_given_two_predictions_for_one_instance_when_matched_then_the_confident_one_wins():
    # given
    gt = pose(1, [0.0, 0.0, 1.0])
    weak, strong = pose(1, [0.0, 0.0, 1.0], confidence=5.0), pose(1, [0.02, 0.0, 1.0], confidence=9.0)

    # when
    matches = match_instances([weak, strong], [gt])

    # then
    assert len(matches) == 1 and matches[0][1] is strong, \
        "Didn't give the instance to the most confident prediction"


def test_given_a_missed_instance_when_evaluated_then_it_scores_an_infinite_distance():
    # given
    models = {1: make_model('box', {'size': 0.1}, 8, class_id=1), 2: make_model('ring', {}, 90, class_id=2)}
    gts = [pose(1, [0.0, 0.0, 1.0]), pose(2, [0.1, 0.0, 1.0])]
    preds = [pose(1, [0.0, 0.0, 1.0])]

    # when
    report = evaluate_scene_set(preds, gts, models)

    # then
    assert report.total['auc_p'] == pytest.approx(50.0), \
        "Didn't score the missed instance as zero"
    assert report.row('box')['auc_p'] == pytest.approx(100.0), \
        "Didn't score the exact prediction as perfect"
    assert (report.non_sym_c, report.sym_c) == (pytest.approx(100.0), pytest.approx(0.0)), \
        "Didn't split the class averages by symmetry"
    assert report.instances['matched'].tolist() == [True, False], \
        "Didn't record which instances were matched"


def test_given_an_evaluation_when_rendered_as_key_values_then_emit_one_line_per_class_and_a_summary():
    # given
    models = {1: make_model('box', {'size': 0.1}, 8, class_id=1)}
    report = evaluate_scene_set([pose(1, [0, 0, 1])], [pose(1, [0, 0, 1])], models)

    # when
    lines = report.to_kv_lines()

    # then
    assert lines[0].startswith("class=box auc_p=100.0 auc_s=100.0 n=1 "), \
        "Didn't print the class line"
    assert lines[-1] == "summary=class_average nonsym_c=100.0 sym_c=nan", \
        "Didn't print the class average summary"
    assert "Rotation only" in report.to_text(), \
        "Didn't print the rotation-only columns in the table"


def test_given_a_class_without_a_model_when_evaluated_then_raise_missing_model():
    # given
    models = {1: make_model('box', {'size': 0.1}, 8, class_id=1)}

    # when, then
    with pytest.raises(MissingModel):
        evaluate_scene_set([], [pose(3, [0, 0, 1])], models)


def test_given_an_explicit_symmetric_class_when_evaluated_then_it_counts_towards_the_symmetric_average():
    # given
    models = {1: make_model('box', {'size': 0.1}, 8, class_id=1)}
    flipped = pose(1, [0, 0, 1], quat_from_axis_angle([0.0, 0.0, 1.0], np.pi))

    # when
    report = evaluate_scene_set([flipped], [pose(1, [0, 0, 1])], models, symmetric_classes=[1])

    # then
    assert np.isnan(report.non_sym_c), \
        "Didn't remove the class from the non-symmetric average"
    assert report.sym_c == pytest.approx(100.0), \
        "Didn't forgive the box's own half-turn symmetry under ADD-S"
