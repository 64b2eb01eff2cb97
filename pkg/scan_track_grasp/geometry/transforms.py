''' Rigid transforms in SE(3), stored as a full rotation matrix plus translation '''

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from utils.errors import InvalidInputError

ORTHO_TOL = 1e-9
# inputs further than this from SO(3) are rejected instead of repaired
REPAIR_TOL = 1e-4


def orthonormalize(rotation):
    ''' Closest rotation matrix (Frobenius) via SVD, with det fixed to +1. '''
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise InvalidInputError('rigid transform must be finite')
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err > REPAIR_TOL or abs(np.linalg.det(rot) - 1.) > REPAIR_TOL:
            raise InvalidInputError('rotation is not orthonormal (error %.3g)' % err)
        if err > ORTHO_TOL or abs(np.linalg.det(rot) - 1.) > ORTHO_TOL:
            rot = orthonormalize(rot)
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, 'rotation', rot)
        object.__setattr__(self, 'translation', trans)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix[:3, :3], matrix[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0., 0., 0.)):
        return cls(Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix(), translation)

    @classmethod
    def from_twist(cls, xi):
        ''' Small-motion update [omega, v] as used by linearized solvers. '''
        xi = np.asarray(xi, dtype=np.float64)
        return cls.from_rotvec(xi[:3], xi[3:])

    @classmethod
    def translate(cls, x, y, z):
        return cls(np.eye(3), (x, y, z))

    @classmethod
    def look_at(cls, eye, target, up=(0., 0., 1.), fallback_up=(1., 0., 0.)):
        ''' Camera-to-world pose with the optical axis (+z) through `target`
            and image "up" (-y) aligned with the projection of `up`. '''
        eye = np.asarray(eye, dtype=np.float64)
        z_axis = np.asarray(target, dtype=np.float64) - eye
        z_axis /= np.linalg.norm(z_axis)
        up = np.asarray(up, dtype=np.float64)
        if np.linalg.norm(np.cross(z_axis, up)) < 1e-9:
            up = np.asarray(fallback_up, dtype=np.float64)
        x_axis = np.cross(z_axis, up)
        x_axis /= np.linalg.norm(x_axis)
        y_axis = np.cross(z_axis, x_axis)
        return cls(np.stack([x_axis, y_axis, z_axis], axis=1), eye)

    @property
    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def as_rotvec(self):
        return Rotation.from_matrix(self.rotation).as_rotvec()

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def rotate(self, vectors):
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def inverse(self):
        return invert(self)

    def __matmul__(self, other):
        return compose(self, other)

    def allclose(self, other, atol=1e-9):
        return (np.allclose(self.rotation, other.rotation, atol=atol)
                and np.allclose(self.translation, other.translation, atol=atol))

    def __repr__(self):
        return 'RigidTransform(rotvec=%s, t=%s)' % (
            np.array2string(self.as_rotvec(), precision=6), np.array2string(self.translation, precision=6))


def compose(a, b):
    ''' (a o b)(p) = a(b(p)) '''
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(T):
    rt = T.rotation.T
    return RigidTransform(rt, -rt @ T.translation)


def geodesic_angle(a, b):
    ''' Rotation angle (radians) of a.R * b.R^T. '''
    c = (np.trace(a.rotation @ b.rotation.T) - 1.) / 2.
    return float(np.arccos(np.clip(c, -1., 1.)))


def translation_distance(a, b):
    return float(np.linalg.norm(a.translation - b.translation))


def pose_error(estimate, truth):
    ''' (rotation error in degrees, translation error in meters) '''
    return np.degrees(geodesic_angle(estimate, truth)), translation_distance(estimate, truth)


def log_residual(T):
    ''' Six-vector [rotvec, translation] used as the pose-graph residual. '''
    return np.concatenate([T.as_rotvec(), T.translation])
