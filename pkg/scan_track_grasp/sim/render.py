''' Depth + instance-mask rendering along scan trajectories '''

import math
from dataclasses import dataclass

import numpy as np

from geometry.camera import CameraIntrinsics, DepthImage, InstanceMask, backproject
from geometry.cloud import (PointCloud, concatenate, estimate_normals, transform_cloud,
                            voxel_downsample)
from geometry.io import format_pose, parse_pose
from geometry.transforms import RigidTransform
from utils.errors import InvalidInputError
from utils.misc import make_rng


@dataclass(frozen=True, eq=False)
class ScanFrame:
    depth: DepthImage
    mask: InstanceMask
    intr: CameraIntrinsics
    cam_pose: RigidTransform
    index: int = 0

    def __post_init__(self):
        if self.index < 0:
            raise InvalidInputError('frame index must be >= 0')
        for image, what in ((self.depth, 'depth'), (self.mask, 'mask')):
            if image.width != self.intr.width or image.height != self.intr.height:
                raise InvalidInputError('%s is %dx%d but intrinsics are %dx%d' % (
                    what, image.width, image.height, self.intr.width, self.intr.height))

    def object_cloud(self, object_id):
        ''' Masked back-projection of one object, camera frame. '''
        return backproject(self.depth, self.intr, self.mask, object_id)

    def scene_cloud(self):
        return backproject(self.depth, self.intr, self.mask)

    def full_cloud(self):
        ''' Every valid pixel, ground included; labels from the mask. '''
        cloud = backproject(self.depth, self.intr)
        v, u = np.nonzero(self.depth.values > 0)
        return cloud.with_labels(self.mask.labels[v, u])


def _azimuths(n_azimuth, azimuth_range_deg):
    span = math.radians(azimuth_range_deg)
    if azimuth_range_deg >= 360.:
        return np.linspace(0., span, n_azimuth, endpoint=False)
    if n_azimuth == 1:
        return np.zeros(1)
    return np.linspace(0., span, n_azimuth)


def hemisphere_trajectory(center, radius, n_azimuth, n_elevation, azimuth_range_deg=360.,
                          min_elevation_deg=20., max_elevation_deg=80.):
    ''' Camera-to-world poses on the upper hemisphere looking at `center`.

        Elevation-major: rings from the highest elevation down, azimuth sweeping
        inside each ring. A single ring sits at the pole; there the image "up"
        follows the azimuth direction since world +z is the optical axis.
    '''
    if not radius > 0:
        raise InvalidInputError('trajectory radius must be positive, got %r' % (radius,))
    if n_azimuth < 1 or n_elevation < 1:
        raise InvalidInputError('view counts must be >= 1')
    if not 0. <= min_elevation_deg <= max_elevation_deg <= 90.:
        raise InvalidInputError('elevation band must satisfy 0 <= min <= max <= 90')
    center = np.asarray(center, dtype=np.float64)
    if n_elevation == 1:
        elevations = np.array([math.pi / 2.])
    else:
        elevations = np.radians(np.linspace(max_elevation_deg, min_elevation_deg, n_elevation))
    poses = []
    for el in elevations:
        for az in _azimuths(n_azimuth, azimuth_range_deg):
            heading = np.array([math.cos(az), math.sin(az), 0.])
            eye = center + radius * np.array([math.cos(el) * heading[0], math.cos(el) * heading[1],
                                              math.sin(el)])
            if el >= math.pi / 2. - 1e-12:
                eye = center + np.array([0., 0., radius])
            poses.append(RigidTransform.look_at(eye, center, up=(0., 0., 1.), fallback_up=heading))
    return poses


def render_frame(scene, cam_pose, intr, index=0, noise_sigma=0., seed=0):
    ''' Nearest-hit depth (camera z) and object ids for every pixel ray.

        Ray directions keep unit camera z, so the hit parameter is the depth.
        Misses render depth 0; ground and background pixels get mask 0.
    '''
    if not isinstance(intr, CameraIntrinsics):
        raise InvalidInputError('render_frame needs CameraIntrinsics')
    h, w = intr.height, intr.width
    dirs_cam = intr.pixel_rays().reshape(-1, 3)
    dirs = cam_pose.rotate(dirs_cam)
    origins = np.broadcast_to(cam_pose.translation, dirs.shape)
    t_hit, ids, _ = scene.cast(origins, dirs)
    hit = np.isfinite(t_hit)
    depth = np.where(hit, t_hit, 0.).reshape(h, w)
    if noise_sigma > 0:
        rng = make_rng(seed, index)
        noisy = depth + rng.normal(0., noise_sigma, size=depth.shape)
        depth = np.where(depth > 0, np.maximum(noisy, 0.), 0.)
    labels = np.where(hit, np.maximum(ids, 0), 0).reshape(h, w)
    mask = InstanceMask(labels.astype(np.int32), scene.num_objects)
    return ScanFrame(DepthImage(depth.astype(np.float32)), mask, intr, cam_pose, index)


def render_sequence(scene, trajectory, intr, noise_sigma=0., seed=0, start_index=0):
    return [render_frame(scene, pose, intr, start_index + i, noise_sigma, seed)
            for i, pose in enumerate(trajectory)]


def fully_visible_cloud(scene, trajectory, intr, dedup_voxel=0.003, normal_k=10, frames=None):
    ''' World-frame union of every view's masked object points.

        Normals are estimated per view in that view's camera frame (so they
        face the camera that saw them) before moving to world. Views with
        fewer than `normal_k` object points contribute nothing.
    '''
    if not trajectory:
        raise InvalidInputError('fully visible cloud needs a non-empty trajectory')
    if frames is None:
        frames = [render_frame(scene, pose, intr, i) for i, pose in enumerate(trajectory)]
    clouds = []
    for frame in frames:
        cloud = frame.scene_cloud()
        if len(cloud) < normal_k:
            continue
        clouds.append(transform_cloud(estimate_normals(cloud, normal_k), frame.cam_pose))
    if not clouds:
        return PointCloud.empty(with_normals=True, with_labels=True)
    merged = concatenate(clouds)
    if dedup_voxel:
        merged = voxel_downsample(merged, dedup_voxel)
    return merged


def save_trajectory(poses, path):
    with open(path, 'w') as f:
        for i, T in enumerate(poses):
            f.write('%d %s\n' % (i, format_pose(T)))


def load_trajectory(path):
    poses = []
    with open(path) as f:
        for lineno, line in enumerate(f):
            tok = line.split()
            if not tok:
                continue
            if int(tok[0]) != len(poses):
                raise InvalidInputError('%s: frame index %s out of order at line %d' % (path, tok[0], lineno + 1))
            poses.append(parse_pose(tok[1:]))
    return poses


def ring_trajectory(center, radius, n_azimuth, elevation_deg, azimuth_range_deg=360., azimuth_offset_deg=0.):
    ''' One azimuth ring at a fixed elevation, e.g. for evaluation views. '''
    if not radius > 0:
        raise InvalidInputError('trajectory radius must be positive, got %r' % (radius,))
    if n_azimuth < 1 or not 0. < elevation_deg <= 90.:
        raise InvalidInputError('ring needs n_azimuth >= 1 and elevation in (0, 90]')
    center = np.asarray(center, dtype=np.float64)
    el = math.radians(elevation_deg)
    poses = []
    for az in _azimuths(n_azimuth, azimuth_range_deg) + math.radians(azimuth_offset_deg):
        heading = np.array([math.cos(az), math.sin(az), 0.])
        eye = center + radius * (math.cos(el) * heading + np.array([0., 0., math.sin(el)]))
        if elevation_deg >= 90.:
            eye = center + np.array([0., 0., radius])
        poses.append(RigidTransform.look_at(eye, center, up=(0., 0., 1.), fallback_up=heading))
    return poses
