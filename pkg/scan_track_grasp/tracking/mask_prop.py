''' Geometric mask propagation: project tracked models, keep depth-consistent pixels '''

import cv2
import numpy as np

from geometry.camera import InstanceMask
from tracking.tracker import TRACKING


def _splat(points, intr):
    ''' Per-pixel nearest depth of projected camera-frame points (0 = empty). '''
    zbuf = np.zeros((intr.height, intr.width), dtype=np.float32)
    if len(points) == 0:
        return zbuf
    u, v, z = intr.project(points)
    ok = (z > 0) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    u, v, z = u[ok].astype(np.int64), v[ok].astype(np.int64), z[ok]
    pix = v * intr.width + u
    order = np.lexsort((z, pix))
    pix, z = pix[order], z[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    zbuf.reshape(-1)[pix[first]] = z[first]
    return zbuf


def propagate_mask(depth, intr, states, predicted_poses, depth_tolerance=0.01, dilate_px=2,
                   num_objects=None):
    ''' Instance mask for a new frame from the predicted poses of tracked objects.

        predicted_poses: {object_id: RigidTransform model -> camera}.
    '''
    d = depth.values
    tracked = [s for s in sorted(states, key=lambda s: s.object_id)
               if s.status == TRACKING and s.object_id in predicted_poses]
    zbufs = {s.object_id: _splat(predicted_poses[s.object_id].apply(s.model_cloud.positions), intr)
             for s in tracked}

    labels = np.zeros((intr.height, intr.width), dtype=np.int32)
    nearest = np.full(labels.shape, np.inf, dtype=np.float32)
    for object_id, zbuf in zbufs.items():
        closer = (zbuf > 0) & (zbuf < nearest)
        labels[closer] = object_id
        nearest[closer] = zbuf[closer]
    agree = (labels > 0) & (d > 0) & (np.abs(d - nearest) <= depth_tolerance)
    labels = np.where(agree, labels, 0).astype(np.int32)

    if dilate_px > 0:
        kernel = np.ones((2 * dilate_px + 1, 2 * dilate_px + 1), dtype=np.uint8)
        for object_id, zbuf in zbufs.items():
            grown = cv2.dilate((labels == object_id).astype(np.uint8), kernel) > 0
            surface = cv2.dilate(zbuf, kernel)
            claim = grown & (labels == 0) & (d > 0) & (np.abs(d - surface) <= depth_tolerance)
            labels[claim] = object_id
    return InstanceMask(labels, num_objects)
