import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from geometry.io import format_pose, parse_pose
from geometry.transforms import RigidTransform, geodesic_angle, log_residual, pose_error
from utils.errors import InvalidInputError

coord = st.floats(-1., 1., allow_nan=False)
vec3 = st.tuples(coord, coord, coord)


@st.composite
def transforms(draw):
    axis = np.array(draw(vec3))
    angle = draw(st.floats(0., 3.))
    norm = np.linalg.norm(axis)
    rotvec = axis / norm * angle if norm > 1e-3 else np.zeros(3)
    return RigidTransform.from_rotvec(rotvec, draw(vec3))


@given(transforms())
def test_rotation_stays_orthonormal(T):
    assert np.abs(T.rotation.T @ T.rotation - np.eye(3)).max() <= 1e-9
    assert abs(np.linalg.det(T.rotation) - 1.) <= 1e-9


@given(transforms())
def test_compose_with_inverse_is_identity(T):
    assert (T @ T.inverse()).allclose(RigidTransform.identity(), atol=1e-9)
    assert (T.inverse() @ T).allclose(RigidTransform.identity(), atol=1e-9)


@given(transforms(), transforms(), vec3)
def test_compose_applies_right_first(a, b, p):
    assert np.allclose((a @ b).apply([p]), a.apply(b.apply([p])), atol=1e-9)


@given(transforms(), vec3, vec3)
def test_apply_is_an_isometry(T, p, q):
    moved = T.apply([p, q])
    assert math.isclose(np.linalg.norm(moved[0] - moved[1]), np.linalg.norm(np.subtract(p, q)), abs_tol=1e-9)


def test_translation_only_moves_points():
    T = RigidTransform.translate(0.1, -0.2, 0.3)
    assert np.allclose(T.apply([[1., 1., 1.]]), [[1.1, 0.8, 1.3]])
    assert np.allclose(T.rotate([[1., 0., 0.]]), [[1., 0., 0.]])


def test_matrix_round_trip():
    T = RigidTransform.from_rotvec([0.2, -0.1, 0.4], [0.5, 0., -0.25])
    assert RigidTransform.from_matrix(T.matrix).allclose(T)
    assert np.allclose(T.matrix[3], [0., 0., 0., 1.])


def test_nearly_orthonormal_input_is_repaired():
    R = RigidTransform.from_rotvec([0.3, 0.2, 0.1]).rotation + 1e-6
    T = RigidTransform(R, np.zeros(3))
    assert np.abs(T.rotation.T @ T.rotation - np.eye(3)).max() <= 1e-9
    assert np.allclose(T.rotation, R, atol=1e-5)


@pytest.mark.parametrize('rotation', [2. * np.eye(3), np.diag([1., 1., -1.]), np.zeros((3, 3))])
def test_non_rotations_are_rejected(rotation):
    with pytest.raises(InvalidInputError):
        RigidTransform(rotation, np.zeros(3))


def test_non_finite_translation_is_rejected():
    with pytest.raises(InvalidInputError):
        RigidTransform(np.eye(3), [0., np.nan, 0.])


def test_geodesic_angle_of_known_rotation():
    a = RigidTransform.from_rotvec([0., 0., 0.5])
    assert math.isclose(geodesic_angle(a, RigidTransform.identity()), 0.5, abs_tol=1e-9)
    rot, trans = pose_error(RigidTransform.from_rotvec([0.1, 0., 0.], [0., 0.003, 0.004]),
                            RigidTransform.identity())
    assert math.isclose(rot, math.degrees(0.1), abs_tol=1e-7)
    assert math.isclose(trans, 0.005, abs_tol=1e-12)


def test_log_residual_is_rotvec_and_translation():
    T = RigidTransform.from_rotvec([0.1, 0.2, -0.3], [1., 2., 3.])
    assert np.allclose(log_residual(T), [0.1, 0.2, -0.3, 1., 2., 3.])
    assert np.allclose(log_residual(RigidTransform.identity()), 0.)


@given(transforms())
def test_pose_text_round_trip_within_six_decimals(T):
    back = parse_pose(format_pose(T).split())
    assert back.allclose(T, atol=2e-6)


def test_look_at_points_optical_axis_at_target():
    eye, target = np.array([0.3, -0.2, 0.5]), np.array([0., 0., 0.03])
    T = RigidTransform.look_at(eye, target)
    dist = np.linalg.norm(target - eye)
    assert np.allclose(T.apply([[0., 0., dist]])[0], target, atol=1e-9)
    # image "down" (+y) points toward the ground
    assert T.rotation[2, 1] < 0


def test_look_at_straight_down_uses_fallback_up():
    T = RigidTransform.look_at([0., 0., 1.], [0., 0., 0.], fallback_up=(1., 0., 0.))
    assert np.allclose(T.rotation[:, 2], [0., 0., -1.])
    assert abs(np.linalg.det(T.rotation) - 1.) < 1e-9
