''' Point clouds, triangle meshes and the per-point geometry kernels '''

from dataclasses import dataclass

import numpy as np
from sklearn.neighbors import KDTree

from utils.errors import InvalidInputError

UNIT_TOL = 1e-6


def _readonly(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    positions: np.ndarray
    normals: np.ndarray = None
    labels: np.ndarray = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pos)):
            raise InvalidInputError('point coordinates must be finite')
        object.__setattr__(self, 'positions', _readonly(pos))
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(nrm) != len(pos):
                raise InvalidInputError('normals length %d != point count %d' % (len(nrm), len(pos)))
            if len(nrm) and np.abs(np.linalg.norm(nrm, axis=1) - 1.).max() > UNIT_TOL:
                raise InvalidInputError('normals must be unit length')
            object.__setattr__(self, 'normals', _readonly(nrm))
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int32).reshape(-1)
            if len(lab) != len(pos):
                raise InvalidInputError('labels length %d != point count %d' % (len(lab), len(pos)))
            object.__setattr__(self, 'labels', _readonly(lab))

    def __len__(self):
        return len(self.positions)

    @classmethod
    def empty(cls, with_normals=False, with_labels=False):
        return cls(np.zeros((0, 3)),
                   np.zeros((0, 3)) if with_normals else None,
                   np.zeros(0, dtype=np.int32) if with_labels else None)

    @property
    def has_normals(self):
        return self.normals is not None

    def select(self, index):
        return PointCloud(
            self.positions[index],
            None if self.normals is None else self.normals[index],
            None if self.labels is None else self.labels[index],
        )

    def with_labels(self, labels):
        labels = np.broadcast_to(np.asarray(labels, dtype=np.int32), (len(self),))
        return PointCloud(self.positions, self.normals, labels)

    def without_normals(self):
        return PointCloud(self.positions, None, self.labels)

    def centroid(self):
        return self.positions.mean(axis=0)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        tris = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(tris):
            if tris.min() < 0 or tris.max() >= len(verts):
                raise InvalidInputError('triangle index out of range')
            if np.any((tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (tris[:, 0] == tris[:, 2])):
                raise InvalidInputError('triangle with repeated vertex index')
        object.__setattr__(self, 'vertices', _readonly(verts))
        object.__setattr__(self, 'triangles', _readonly(tris))

    def __len__(self):
        return len(self.triangles)

    def is_empty(self):
        return len(self.triangles) == 0

    def corners(self):
        return self.vertices[self.triangles]

    def face_areas(self):
        c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def face_normals(self):
        c = self.corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(norm > 0, norm, 1.)

    def transformed(self, T):
        return TriangleMesh(T.apply(self.vertices), self.triangles)

    def flipped(self, which=None):
        tris = self.triangles.copy()
        which = np.ones(len(tris), dtype=bool) if which is None else which
        tris[which] = tris[which][:, [0, 2, 1]]
        return TriangleMesh(self.vertices, tris)


def transform_cloud(cloud, T):
    ''' p' = R p + t; normals rotated only, labels kept. '''
    return PointCloud(
        T.apply(cloud.positions),
        None if cloud.normals is None else T.rotate(cloud.normals),
        cloud.labels,
    )


def concatenate(clouds):
    clouds = [c for c in clouds if c is not None]
    if not clouds:
        return PointCloud.empty()
    positions = np.concatenate([c.positions for c in clouds], axis=0)
    normals = None
    if all(c.has_normals for c in clouds):
        normals = np.concatenate([c.normals for c in clouds], axis=0)
    labels = None
    if all(c.labels is not None for c in clouds):
        labels = np.concatenate([c.labels for c in clouds], axis=0)
    return PointCloud(positions, normals, labels)


def build_tree(points):
    return KDTree(np.asarray(points, dtype=np.float64))


def estimate_normals(cloud, k=10):
    ''' Unit normal per point: least-variance direction of its k nearest
        neighbours, flipped to face the origin (the camera of the cloud's frame).

        Rank-deficient neighbourhoods (collinear or coincident points) take the
        lexicographically smallest camera-facing unit vector of the degenerate
        eigenspace, built from projected coordinate axes.
    '''
    n_points = len(cloud)
    if k < 3 or n_points < k:
        raise InvalidInputError('normal estimation needs at least k=%d >= 3 points, got %d' % (k, n_points))
    pos = cloud.positions
    _, idx = build_tree(pos).query(pos, k=k)
    nbrs = pos[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum('nki,nkj->nij', centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()

    flip = np.einsum('ij,ij->i', normals, pos) > 0
    normals[flip] *= -1

    scale = np.maximum(evals[:, 2], 1e-300)
    degenerate = (evals[:, 1] - evals[:, 0]) <= 1e-9 * scale
    for i in np.nonzero(degenerate)[0]:
        tol = evals[i, 0] + 1e-9 * scale[i]
        basis = evecs[i][:, evals[i] <= tol]
        candidates = []
        for axis in np.eye(3):
            c = basis @ (basis.T @ axis)
            norm = np.linalg.norm(c)
            if norm < 1e-6:
                continue
            c = c / norm
            if np.dot(c, pos[i]) > 0:
                c = -c
            candidates.append(tuple(c))
        if candidates:
            normals[i] = min(candidates)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pos, normals, cloud.labels)


def voxel_keys(points, voxel):
    # the epsilon keeps points lying exactly on a voxel boundary in a stable cell
    return np.floor(np.asarray(points) / voxel + 1e-9).astype(np.int64)


def group_by_voxel(points, voxel):
    ''' (unique voxel keys in lexicographic order, inverse index per point) '''
    keys = voxel_keys(points, voxel)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    return uniq, np.asarray(inverse).reshape(-1)


def majority_labels(inverse, labels, n_groups):
    ''' Most frequent label per group; ties resolve to the smallest label. '''
    pairs, counts = np.unique(np.stack([inverse, labels], axis=1), axis=0, return_counts=True)
    order = np.lexsort((pairs[:, 1], -counts, pairs[:, 0]))
    pairs = pairs[order]
    first = np.ones(len(pairs), dtype=bool)
    first[1:] = pairs[1:, 0] != pairs[:-1, 0]
    out = np.zeros(n_groups, dtype=np.int32)
    out[pairs[first, 0]] = pairs[first, 1]
    return out


def reduce_groups(cloud, inverse, n_groups):
    ''' Centroid / mean normal / majority label per group index. '''
    counts = np.bincount(inverse, minlength=n_groups).astype(np.float64)
    positions = np.stack([np.bincount(inverse, weights=cloud.positions[:, d], minlength=n_groups)
                          for d in range(3)], axis=1) / counts[:, None]
    normals = None
    if cloud.has_normals:
        summed = np.stack([np.bincount(inverse, weights=cloud.normals[:, d], minlength=n_groups)
                           for d in range(3)], axis=1)
        norm = np.linalg.norm(summed, axis=1)
        # opposite normals cancelling inside one voxel fall back to the first member's normal
        first = np.full(n_groups, len(inverse))
        np.minimum.at(first, inverse, np.arange(len(inverse)))
        weak = norm < 1e-9
        summed[weak] = cloud.normals[first[weak]]
        normals = summed / np.linalg.norm(summed, axis=1, keepdims=True)
    labels = None
    if cloud.labels is not None:
        labels = majority_labels(inverse, cloud.labels, n_groups)
    return PointCloud(positions, normals, labels)


def voxel_downsample(cloud, voxel):
    ''' One centroid per occupied voxel of edge `voxel` (meters). '''
    if not voxel > 0:
        raise InvalidInputError('voxel size must be positive, got %r' % (voxel,))
    if len(cloud) == 0:
        return cloud
    uniq, inverse = group_by_voxel(cloud.positions, voxel)
    return reduce_groups(cloud, inverse, len(uniq))


def crop_cloud(cloud, center, radius):
    keep = np.linalg.norm(cloud.positions - np.asarray(center), axis=1) <= radius
    return cloud.select(keep)


def nearest_distances(query_points, reference_points):
    if len(reference_points) == 0:
        return np.full(len(query_points), np.inf)
    if len(query_points) == 0:
        return np.zeros(0)
    dist, _ = build_tree(reference_points).query(np.asarray(query_points), k=1)
    return dist[:, 0]


def coverage(cloud, gt_samples, radius):
    ''' Fraction of ground-truth samples with a cloud point within `radius`. '''
    gt = gt_samples.positions if isinstance(gt_samples, PointCloud) else np.asarray(gt_samples)
    pts = cloud.positions if isinstance(cloud, PointCloud) else np.asarray(cloud)
    if len(gt) == 0:
        return 0.
    return float(np.mean(nearest_distances(gt, pts) <= radius))


def chamfer_distance(a_points, b_points):
    a = np.asarray(a_points)
    b = np.asarray(b_points)
    return 0.5 * (nearest_distances(a, b).mean() + nearest_distances(b, a).mean())
