import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from dense_pose_aggregation.errors import BehindCamera, NonPositiveDepth, ZeroNorm  # noqa
from dense_pose_aggregation.geometry import (angular_distances, backproject, canonicalize_sign, project,  # noqa
                                             quat_angular_distance, quat_conjugate, quat_from_axis_angle,
                                             quat_multiply, quat_normalize, quat_to_rotmat, rotmat_to_quat,
                                             transform_points)
from dense_pose_aggregation.structures import YCB_VIDEO_INTRINSICS  # noqa

K = YCB_VIDEO_INTRINSICS


def random_quaternions(count, seed=0):
    quats = np.random.default_rng(seed).standard_normal((count, 4))
    return quats / np.linalg.norm(quats, axis=1, keepdims=True)


def test_given_a_scaled_quaternion_when_normalised_then_return_unit_quaternion_and_norm():
    # given
    q = np.array([0.0, 0.0, 0.0, 2.0])

    # when
    unit, norm = quat_normalize(q)

    # then
    assert np.array_equal(unit, [0.0, 0.0, 0.0, 1.0]), \
        "Didn't normalise the quaternion to unit length"
    assert norm == 2.0, \
        "Didn't return the norm of the raw quaternion"


def test_given_a_zero_quaternion_when_normalised_then_raise_zero_norm():
    # given
    q = np.zeros(4)

    # when, then
    with pytest.raises(ZeroNorm):
        quat_normalize(q)


def test_given_identity_quaternion_when_converted_then_return_identity_matrix():
    # given, when
    rotation = quat_to_rotmat([1.0, 0.0, 0.0, 0.0])

    # then
    assert np.array_equal(rotation, np.eye(3)), \
        "Didn't map the identity quaternion to the identity matrix"


def test_given_a_quarter_turn_about_z_when_converted_then_return_expected_matrix():
    # given
    q = [np.sqrt(0.5), 0.0, 0.0, np.sqrt(0.5)]

    # when
    rotation = quat_to_rotmat(q)

    # then
    expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(rotation, expected, atol=1e-12), \
        "Didn't rotate x onto y for a quarter turn about z"


def test_given_antipodal_quaternions_when_converted_then_matrices_are_bit_identical():
    # given
    for q in random_quaternions(100):
        # when
        first, second = quat_to_rotmat(q), quat_to_rotmat(-q)

        # then
        assert np.array_equal(first, second), \
            "Didn't map q and -q to the same rotation matrix"


def test_given_random_quaternions_when_converted_then_matrices_are_proper_rotations():
    # given
    for q in random_quaternions(100, seed=1):
        # when
        rotation = quat_to_rotmat(q * 3.0)

        # then
        assert np.allclose(rotation @ rotation.T, np.eye(3), atol=1e-12), \
            "Didn't produce an orthogonal matrix"
        assert abs(np.linalg.det(rotation) - 1.0) < 1e-12, \
            "Didn't produce a matrix with determinant one"


def test_given_random_quaternions_when_converted_then_match_an_independent_reference():
    # given
    quats = random_quaternions(50, seed=2)

    # when
    ours = np.array([quat_to_rotmat(q) for q in quats])

    # then
    reference = Rotation.from_quat(quats[:, [1, 2, 3, 0]]).as_matrix()
    assert np.allclose(ours, reference, atol=1e-12), \
        "Didn't agree with scipy's rotation matrices"


def test_given_a_rotation_matrix_when_converted_back_then_return_the_canonical_quaternion():
    # given
    for q in random_quaternions(100, seed=3):
        # when
        recovered = rotmat_to_quat(quat_to_rotmat(q))

        # then
        assert np.allclose(recovered, canonicalize_sign(q), atol=1e-12), \
            "Didn't recover the quaternion from its rotation matrix"


def test_given_a_quaternion_when_compared_with_itself_or_its_negation_then_distance_is_zero():
    # given
    q = random_quaternions(1, seed=4)[0]

    # when
    distances = [quat_angular_distance(q, q), quat_angular_distance(q, -q)]

    # then
    assert distances == [0.0, 0.0], \
        "Didn't return zero distance for the same rotation"


def test_given_identity_and_a_half_turn_when_compared_then_distance_is_pi():
    # given, when
    distance = quat_angular_distance([1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0])

    # then
    assert abs(distance - np.pi) < 1e-15, \
        "Didn't return pi for a half turn"


def test_given_a_small_rotation_when_compared_with_identity_then_distance_keeps_full_precision():
    # given
    q = quat_from_axis_angle([0.0, 0.0, 1.0], 1e-7)

    # when
    distance = quat_angular_distance([1.0, 0.0, 0.0, 0.0], q)

    # then
    assert abs(distance - 1e-7) < 1e-15, \
        "Didn't resolve a tiny rotation angle"


def test_given_random_quaternions_when_distances_computed_then_they_are_symmetric_and_bounded():
    # given
    quats = random_quaternions(200, seed=5)
    q = quats[0]

    # when
    forward = angular_distances(quats, q)
    backward = np.array([quat_angular_distance(q, each) for each in quats])

    # then
    assert np.allclose(forward, backward, atol=1e-12), \
        "Didn't return symmetric distances"
    assert np.all((forward >= 0) & (forward <= np.pi)), \
        "Didn't keep distances in [0, pi]"


def test_given_two_rotations_when_multiplied_then_matrices_compose():
    # given
    a, b = random_quaternions(2, seed=6)

    # when
    product = quat_multiply(a, b)

    # then
    assert np.allclose(quat_to_rotmat(product), quat_to_rotmat(a) @ quat_to_rotmat(b), atol=1e-12), \
        "Didn't compose the rotations"


def test_given_a_unit_quaternion_when_multiplied_by_its_conjugate_then_return_the_identity():
    # given
    q = random_quaternions(1, seed=7)[0]

    # when
    product = quat_multiply(q, quat_conjugate(q))

    # then
    assert np.allclose(product, [1.0, 0.0, 0.0, 0.0], atol=1e-12), \
        "Didn't invert the rotation"


def test_given_a_point_on_the_optical_axis_when_projected_then_land_on_the_principal_point():
    # given, when
    u, v, z = project([0.0, 0.0, 2.0], K)

    # then
    assert (u, v, z) == (K.cx, K.cy, 2.0), \
        "Didn't project onto the principal point"


def test_given_a_point_behind_the_camera_when_projected_then_raise_behind_camera():
    # given, when, then
    with pytest.raises(BehindCamera):
        project([0.1, 0.0, -1.0], K)


def test_given_a_projected_point_when_backprojected_then_recover_the_point():
    # given
    point = np.array([0.12, -0.07, 0.9])

    # when
    recovered = backproject(*project(point, K), K)

    # then
    assert np.allclose(recovered, point, atol=1e-12), \
        "Didn't recover the point by backprojection"


def test_given_a_non_positive_depth_when_backprojected_then_raise_non_positive_depth():
    # given, when, then
    with pytest.raises(NonPositiveDepth):
        backproject(100.0, 100.0, 0.0, K)


def test_given_a_pose_when_points_transformed_then_rotate_then_translate():
    # given
    q = [np.sqrt(0.5), 0.0, 0.0, np.sqrt(0.5)]

    # when
    points = transform_points(q, [0.0, 0.0, 1.0], [[1.0, 0.0, 0.0]])

    # then
    assert np.allclose(points, [[0.0, 1.0, 1.0]], atol=1e-12), \
        "Didn't apply rotation before translation"


def test_given_random_triples_when_distances_measured_then_the_triangle_inequality_holds():
    # given
    a, b, c = (random_quaternions(1000, seed=seed) for seed in (8, 9, 10))

    # when
    direct = np.array([quat_angular_distance(x, z) for x, z in zip(a, c)])
    detour = np.array([quat_angular_distance(x, y) + quat_angular_distance(y, z) for x, y, z in zip(a, b, c)])

    # then
    assert np.all(direct <= detour + 1e-9), \
        "Didn't satisfy the triangle inequality"
