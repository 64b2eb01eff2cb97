''' Keyframe memory pool and the current-frame pose refinement '''

import math
import threading
from dataclasses import dataclass
from functools import cached_property

import networkx as nx
import numpy as np
from scipy.optimize import least_squares

from geometry.cloud import build_tree
from geometry.transforms import RigidTransform, geodesic_angle, log_residual
from utils.errors import InvalidInputError


@dataclass(frozen=True, eq=False)
class Keyframe:
    id: int
    frame_index: int
    object_cloud: object    # PointCloud with normals, camera frame of that frame
    pose: RigidTransform    # model -> camera
    depth: object = None
    mask: object = None

    def __post_init__(self):
        if len(self.object_cloud) == 0:
            raise InvalidInputError('keyframe %d has an empty object cloud' % self.id)

    @cached_property
    def tree(self):
        return build_tree(self.object_cloud.positions)


def keyframe_distance(pose, other, theta_key_deg, d_key):
    ''' Normalized Chebyshev distance of the relative pose pose o other^-1. '''
    rel = pose @ other.inverse()
    angle = math.degrees(geodesic_angle(rel, RigidTransform.identity()))
    return max(angle / theta_key_deg, float(np.linalg.norm(rel.translation)) / d_key)


class KeyframeMemoryPool:
    ''' Insert-only store of keyframes, with a covisibility graph over their ids.

        Edges join a new keyframe to the keyframes that constrained its pose,
        weighted by the registration inlier fraction.
    '''

    def __init__(self, theta_key_deg=10., d_key=0.05, K=3):
        if theta_key_deg <= 0 or d_key <= 0 or K < 1:
            raise InvalidInputError('keyframe thresholds must be positive and K >= 1')
        self.theta_key_deg = theta_key_deg
        self.d_key = d_key
        self.K = K
        self.keyframes = []
        self.graph = nx.Graph()
        self._lock = threading.RLock()

    def __len__(self):
        return len(self.keyframes)

    def __iter__(self):
        return iter(list(self.keyframes))

    def __getitem__(self, kf_id):
        return self.keyframes[kf_id]

    def add(self, frame_index, object_cloud, pose, depth=None, mask=None, links=None):
        with self._lock:
            kf = Keyframe(len(self.keyframes), frame_index, object_cloud, pose, depth, mask)
            self.keyframes.append(kf)
            self.graph.add_node(kf.id, frame_index=frame_index)
            for other, weight in sorted((links or {}).items()):
                if other != kf.id and weight > 0:
                    self.graph.add_edge(kf.id, other, weight=float(weight))
            return kf

    def distance(self, pose, kf):
        return keyframe_distance(pose, kf.pose, self.theta_key_deg, self.d_key)

    def nearest(self, pose, K=None):
        ''' The K keyframes closest to `pose`, ties broken by lower id. '''
        with self._lock:
            ranked = sorted(self.keyframes, key=lambda kf: (self.distance(pose, kf), kf.id))
        return ranked[:K or self.K]

    def should_add(self, pose):
        with self._lock:
            if not self.keyframes:
                return True
            return min(self.distance(pose, kf) for kf in self.keyframes) > 1.

    def covisible(self, kf_id):
        with self._lock:
            return sorted(self.graph.neighbors(kf_id))


@dataclass(frozen=True)
class PoseConstraint:
    ''' Z o T o A^-1 = identity at the true current pose T. '''
    anchor: RigidTransform
    measurement: RigidTransform
    weight: float


def optimize_current_pose(init, constraints):
    ''' Weighted least squares over the current pose only.

        Residual per constraint is sqrt(w) * log(Z o T o A^-1), with T
        perturbed on the left of `init`. Constraints with zero weight are
        ignored; if nothing remains the initial pose is returned.
    '''
    active = [c for c in constraints if c.weight > 0]
    if not active:
        return init
    anchors_inv = [c.anchor.inverse() for c in active]
    scales = [math.sqrt(c.weight) for c in active]

    def residuals(delta):
        T = RigidTransform.from_twist(delta) @ init
        return np.concatenate([s * log_residual(c.measurement @ T @ a_inv)
                               for c, a_inv, s in zip(active, anchors_inv, scales)])

    result = least_squares(residuals, np.zeros(6), method='lm', xtol=1e-12, ftol=1e-12)
    return RigidTransform.from_twist(result.x) @ init
