''' Per-object 6D pose tracking

The model frame of an object is the camera frame of its first observation,
so the initial pose is the identity and the tracked pose T (model -> current
camera) is directly the pose change since frame 0.
'''

from dataclasses import dataclass, field

import numpy as np

from geometry.cloud import (concatenate, estimate_normals, build_tree, transform_cloud,
                            voxel_downsample)
from geometry.transforms import RigidTransform
from tracking.icp import MIN_POINTS, IcpParams, icp_register
from tracking.keyframes import KeyframeMemoryPool, PoseConstraint, optimize_current_pose
from utils.errors import InvalidInputError, RegistrationFailedError, TrackingLostError

TRACKING = 'tracking'
LOST = 'lost'
MOTION_PRIORS = ('previous', 'kinematic')


@dataclass(frozen=True)
class TrackerConfig:
    theta_key_deg: float = 10.
    d_key: float = 0.05
    K: int = 3
    icp: IcpParams = IcpParams()
    n_min: int = 50
    normal_k: int = 10
    # consecutive ICP failures tolerated before the object is lost
    max_misses: int = 0
    motion_prior: str = 'previous'
    use_pool: bool = True
    model_voxel: float = 0.002
    max_source_points: int = 3000

    def __post_init__(self):
        if self.motion_prior not in MOTION_PRIORS:
            raise InvalidInputError('motion prior must be one of %s' % (MOTION_PRIORS,))
        if self.n_min < 1 or self.normal_k < 3 or self.max_misses < 0 or self.max_source_points < MIN_POINTS:
            raise InvalidInputError('invalid tracker counts')

    @property
    def min_points(self):
        ''' Smallest observation that can be both normal-estimated and registered. '''
        return max(self.normal_k, MIN_POINTS)


@dataclass
class TrackState:
    object_id: int
    model_cloud: object
    pose: RigidTransform
    pool: KeyframeMemoryPool
    cfg: TrackerConfig = TrackerConfig()
    status: str = TRACKING
    misses: int = 0
    model_frozen: bool = False
    # camera pose of the frame where `pose` was last estimated
    anchor_cam_pose: RigidTransform = None
    last_fraction: float = 1.
    last_links: dict = field(default_factory=dict)
    degraded_refinements: int = 0
    trajectory: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def __post_init__(self):
        self._model_tree = None

    @property
    def model_tree(self):
        if self._model_tree is None:
            self._model_tree = build_tree(self.model_cloud.positions)
        return self._model_tree

    def set_model(self, cloud, frozen=False):
        if len(cloud) == 0:
            raise InvalidInputError('model cloud for object %d is empty' % self.object_id)
        self.model_cloud = cloud
        self._model_tree = None
        self.model_frozen = frozen

    def mark_lost(self, reason):
        self.status = LOST
        self.diagnostics.append(reason)

    def predict(self, frame, prior=None):
        ''' Initial pose for `frame` under the configured motion prior. '''
        prior = prior or self.cfg.motion_prior
        if prior == 'kinematic' and self.anchor_cam_pose is not None:
            return frame.cam_pose.inverse() @ self.anchor_cam_pose @ self.pose
        return self.pose


def _subsample(cloud, max_points):
    if len(cloud) <= max_points:
        return cloud
    stride = int(np.ceil(len(cloud) / max_points))
    return cloud.select(np.arange(0, len(cloud), stride))


def init_object(frame, object_id, cfg=TrackerConfig()):
    ''' Track state from the first observation; that frame becomes keyframe 0. '''
    if frame.mask.pixel_count(object_id) < cfg.n_min:
        raise RegistrationFailedError('object %d has %d mask pixels in frame %d (need %d)' % (
            object_id, frame.mask.pixel_count(object_id), frame.index, cfg.n_min))
    cloud = frame.object_cloud(object_id)
    if len(cloud) < max(cfg.n_min, cfg.min_points):
        raise RegistrationFailedError('object %d has %d valid depth points in frame %d' % (
            object_id, len(cloud), frame.index))
    cloud = estimate_normals(cloud, cfg.normal_k)
    pool = KeyframeMemoryPool(cfg.theta_key_deg, cfg.d_key, cfg.K)
    identity = RigidTransform.identity()
    pool.add(frame.index, cloud, identity, frame.depth, frame.mask)
    state = TrackState(object_id, cloud, identity, pool, cfg, anchor_cam_pose=frame.cam_pose)
    state.trajectory.append((frame.index, identity))
    return state


def register_to_model(state, observed, predicted):
    ''' ICP of the observation (camera frame) onto the model; returns (pose, inlier fraction). '''
    source = _subsample(observed, state.cfg.max_source_points)
    X, _, fraction = icp_register(source, state.model_cloud, predicted.inverse(),
                                  state.cfg.icp, target_tree=state.model_tree)
    return X.inverse(), fraction


def track_frame(state, frame, init=None):
    ''' Register the frame's masked cloud against the model, refine with the
        keyframe pool and consider the frame as a new keyframe.

        An ICP failure keeps the last pose and counts a miss; more than
        cfg.max_misses consecutive misses mark the object lost.
    '''
    if state.status != TRACKING:
        raise InvalidInputError('object %d is not being tracked' % state.object_id)
    observed = frame.object_cloud(state.object_id)
    predicted = init if init is not None else state.predict(frame)
    try:
        if len(observed) < state.cfg.min_points:
            raise TrackingLostError('object %d has %d points in frame %d' % (
                state.object_id, len(observed), frame.index))
        pose, fraction = register_to_model(state, observed, predicted)
    except TrackingLostError as e:
        state.misses += 1
        state.trajectory.append((frame.index, state.pose))
        if state.misses > state.cfg.max_misses:
            state.mark_lost('frame %d: %s' % (frame.index, e))
        return state

    state.misses = 0
    state.last_fraction = fraction
    state.pose = pose
    if state.cfg.use_pool:
        state.pose = refine_with_pool(state, frame, observed, pose)
    state.anchor_cam_pose = frame.cam_pose
    state.trajectory.append((frame.index, state.pose))
    maybe_add_keyframe(state, frame, observed)
    return state


def refine_with_pool(state, frame, observed=None, tracked=None):
    ''' Refine the current pose against the K pose-nearest keyframes.

        Each keyframe contributes Z_k = ICP(current -> keyframe cloud), a
        measurement of T_kf o T^-1, weighted by its inlier fraction; the
        model registration enters as one more constraint. When every keyframe
        registration fails the tracked pose is returned unchanged.
    '''
    if len(state.pool) == 0:
        raise InvalidInputError('keyframe pool of object %d is empty' % state.object_id)
    observed = observed if observed is not None else frame.object_cloud(state.object_id)
    tracked = tracked if tracked is not None else state.pose
    source = _subsample(observed, state.cfg.max_source_points)
    constraints = [PoseConstraint(RigidTransform.identity(), tracked.inverse(), state.last_fraction)]
    links = {}
    for kf in state.pool.nearest(tracked):
        try:
            Z, _, fraction = icp_register(source, kf.object_cloud, kf.pose @ tracked.inverse(),
                                          state.cfg.icp, target_tree=kf.tree)
        except TrackingLostError:
            continue
        constraints.append(PoseConstraint(kf.pose, Z, fraction))
        links[kf.id] = fraction
    state.last_links = links
    if not links:
        state.degraded_refinements += 1
        return tracked
    return optimize_current_pose(tracked, constraints)


def maybe_add_keyframe(state, frame, observed=None):
    ''' Insert the frame when it is farther than the thresholds from every keyframe.

        Images are kept only while the model can still be fused; keyframes
        added against a frozen model hold just their cloud.
    '''
    if state.status != TRACKING:
        raise InvalidInputError('object %d is not being tracked' % state.object_id)
    if not state.pool.should_add(state.pose):
        return False
    observed = observed if observed is not None else frame.object_cloud(state.object_id)
    if len(observed) < state.cfg.min_points:
        return False
    cloud = estimate_normals(observed, state.cfg.normal_k)
    if state.model_frozen:
        state.pool.add(frame.index, cloud, state.pose, links=state.last_links)
    else:
        state.pool.add(frame.index, cloud, state.pose, frame.depth, frame.mask, links=state.last_links)
        in_model = transform_cloud(cloud, state.pose.inverse())
        state.set_model(voxel_downsample(concatenate([state.model_cloud, in_model]), state.cfg.model_voxel))
    return True
