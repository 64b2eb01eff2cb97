''' Point-to-plane ICP between a masked observation and a model cloud '''

from dataclasses import dataclass

import numpy as np

from geometry.cloud import build_tree
from geometry.transforms import RigidTransform
from utils.errors import InvalidInputError, TrackingLostError

MIN_POINTS = 10


@dataclass(frozen=True)
class IcpParams:
    d_corr: float = 0.02
    max_iter: int = 30
    eps: float = 1e-6
    f_min: float = 0.3


def _correspond(tree, points, d_corr):
    dist, idx = tree.query(points, k=1)
    dist, idx = dist[:, 0], idx[:, 0]
    inlier = dist <= d_corr
    return idx, inlier


def icp_register(source, target, init, params=IcpParams(), target_tree=None):
    ''' Refine `init` (source frame -> target frame) by point-to-plane ICP.

        Each iteration pairs every transformed source point with its nearest
        target point, drops pairs farther than d_corr, and solves the
        linearized system [p x n, n] [w; v] = -n.(p - q) for a left update.
        Returns (pose, rms point-to-plane residual, inlier fraction).
    '''
    if len(source) < MIN_POINTS or len(target) < MIN_POINTS:
        raise InvalidInputError('ICP needs >= %d points per cloud (got %d / %d)' % (
            MIN_POINTS, len(source), len(target)))
    if not target.has_normals:
        raise InvalidInputError('ICP target must carry normals')
    tree = target_tree if target_tree is not None else build_tree(target.positions)
    src = source.positions
    T = init
    for _ in range(params.max_iter):
        moved = T.apply(src)
        idx, inlier = _correspond(tree, moved, params.d_corr)
        if np.count_nonzero(inlier) < 6:
            raise TrackingLostError('ICP found %d correspondences within %.3f m' % (
                np.count_nonzero(inlier), params.d_corr), float(np.mean(inlier)))
        p = moved[inlier]
        q = target.positions[idx[inlier]]
        n = target.normals[idx[inlier]]
        A = np.concatenate([np.cross(p, n), n], axis=1)
        b = -np.einsum('ij,ij->i', n, p - q)
        xi = np.linalg.lstsq(A, b, rcond=None)[0]
        T = RigidTransform.from_twist(xi) @ T
        if np.linalg.norm(xi) < params.eps:
            break

    moved = T.apply(src)
    idx, inlier = _correspond(tree, moved, params.d_corr)
    fraction = float(np.mean(inlier))
    if fraction < params.f_min or not inlier.any():
        raise TrackingLostError('ICP inlier fraction %.3f below %.3f' % (fraction, params.f_min), fraction)
    n = target.normals[idx[inlier]]
    residual = np.einsum('ij,ij->i', n, moved[inlier] - target.positions[idx[inlier]])
    rms = float(np.sqrt(np.mean(residual ** 2)))
    return T, rms, fraction
