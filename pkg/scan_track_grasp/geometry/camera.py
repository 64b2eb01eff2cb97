''' Pinhole camera, depth / instance images and back-projection '''

from dataclasses import dataclass

import numpy as np

from geometry.cloud import PointCloud
from utils.errors import InvalidInputError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError('focal lengths must be positive')
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidInputError('principal point (%g, %g) outside %dx%d image' % (
                self.cx, self.cy, self.width, self.height))

    @classmethod
    def default(cls):
        return cls(fx=277., fy=277., cx=160., cy=120., width=320, height=240)

    def pixel_rays(self):
        ''' (H, W, 3) camera-frame ray directions with unit z, one per integer pixel index. '''
        u, v = np.meshgrid(np.arange(self.width, dtype=np.float64),
                           np.arange(self.height, dtype=np.float64))
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)

    def project(self, points):
        ''' Camera-frame points -> (u, v, z); pixel coordinates rounded to the nearest index. '''
        points = np.asarray(points, dtype=np.float64)
        z = points[:, 2]
        with np.errstate(divide='ignore', invalid='ignore'):
            u = np.round(points[:, 0] / z * self.fx + self.cx)
            v = np.round(points[:, 1] / z * self.fy + self.cy)
        return u, v, z


@dataclass(frozen=True, eq=False)
class DepthImage:
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise InvalidInputError('depth image must be 2-D')
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InvalidInputError('depth values must be finite and non-negative')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class InstanceMask:
    labels: np.ndarray
    num_objects: int = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int32)
        if labels.ndim != 2:
            raise InvalidInputError('instance mask must be 2-D')
        if np.any(labels < 0):
            raise InvalidInputError('instance labels must be non-negative')
        if self.num_objects is not None and labels.size and labels.max() > self.num_objects:
            raise InvalidInputError('label %d exceeds registered object count %d' % (
                labels.max(), self.num_objects))
        labels.setflags(write=False)
        object.__setattr__(self, 'labels', labels)

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    def object_ids(self):
        ids = np.unique(self.labels)
        return [int(i) for i in ids if i > 0]

    def pixel_count(self, object_id):
        return int(np.count_nonzero(self.labels == object_id))


def _check_dims(image, intr, what):
    if image.width != intr.width or image.height != intr.height:
        raise InvalidInputError('%s is %dx%d but intrinsics are %dx%d' % (
            what, image.width, image.height, intr.width, intr.height))


def backproject(depth, intr, mask=None, object_id=None):
    ''' One camera-frame point per valid pixel: ((u-cx)d/fx, (v-cy)d/fy, d).

        With a mask only labelled pixels are kept (or only `object_id`), and
        the labels are carried onto the points.
    '''
    _check_dims(depth, intr, 'depth')
    d = depth.values.astype(np.float64)
    valid = d > 0
    if mask is not None:
        _check_dims(mask, intr, 'mask')
        if object_id is None:
            valid &= mask.labels > 0
        else:
            valid &= mask.labels == object_id
    v, u = np.nonzero(valid)
    z = d[v, u]
    points = np.stack([(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z], axis=1)
    labels = mask.labels[v, u].astype(np.int32) if mask is not None else None
    return PointCloud(points.reshape(-1, 3), labels=labels)
