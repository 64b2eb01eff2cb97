''' Object-centric TSDF fusion and marching-cubes mesh extraction

Volumes live in the object's model frame. The signed distance is positive in
front of the observed surface and negative behind it, truncated to [-trunc,
trunc]; unobserved voxels keep weight 0.
'''

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates
from skimage import measure

from geometry.cloud import TriangleMesh
from utils.errors import EmptyMeshError, FrozenVolumeError, InvalidInputError

VOXEL_BUDGET = 256 ** 3


@dataclass(eq=False)
class TsdfVolume:
    origin: np.ndarray
    voxel_size: float
    dims: tuple
    trunc: float
    sdf: np.ndarray = None
    weight: np.ndarray = None
    frozen: bool = False

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.dims = tuple(int(d) for d in self.dims)
        if not self.voxel_size > 0:
            raise InvalidInputError('voxel size must be positive')
        if self.trunc < self.voxel_size:
            raise InvalidInputError('truncation %.4f must be >= voxel size %.4f' % (self.trunc, self.voxel_size))
        if min(self.dims) < 1:
            raise InvalidInputError('volume dims must be >= 1, got %s' % (self.dims,))
        if self.sdf is None:
            self.sdf = np.full(self.dims, self.trunc, dtype=np.float32)
        if self.weight is None:
            self.weight = np.zeros(self.dims, dtype=np.float32)

    def voxel_centers(self):
        ''' (X*Y*Z, 3) model-frame voxel centers in C order. '''
        idx = np.stack(np.meshgrid(*[np.arange(d) for d in self.dims], indexing='ij'), axis=-1)
        return self.origin + (idx.reshape(-1, 3) + 0.5) * self.voxel_size


def create_volume(model_cloud, voxel_size=0.005, trunc=0.015, padding=0.02, max_voxels=VOXEL_BUDGET):
    ''' Empty volume covering the cloud's bounds expanded by `padding`. '''
    if len(model_cloud) == 0:
        raise InvalidInputError('cannot size a volume from an empty cloud')
    if not voxel_size > 0:
        raise InvalidInputError('voxel size must be positive')
    lo = model_cloud.positions.min(axis=0) - padding
    hi = model_cloud.positions.max(axis=0) + padding
    dims = tuple(max(1, int(math.ceil((e / voxel_size) - 1e-9))) for e in hi - lo)
    count = int(np.prod(dims))
    if count > max_voxels:
        raise InvalidInputError('volume %s has %d voxels, budget is %d' % (dims, count, max_voxels))
    return TsdfVolume(lo, voxel_size, dims, trunc)


def integrate(vol, frame, object_id, pose):
    ''' Projective running-mean update from one masked depth frame.

        pose maps the model frame into the frame's camera. Voxels outside the
        frustum, off the object's mask, or deeper than trunc behind the
        measured surface are left untouched.
    '''
    if vol.frozen:
        raise FrozenVolumeError('volume of object %d is frozen' % object_id)
    if frame.mask.pixel_count(object_id) == 0:
        return vol
    intr = frame.intr
    u, v, z = intr.project(pose.apply(vol.voxel_centers()))
    ok = (z > 0) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    flat = np.nonzero(ok)[0]
    u, v, z = u[ok].astype(np.int64), v[ok].astype(np.int64), z[ok]
    d = frame.depth.values[v, u].astype(np.float64)
    hit = (frame.mask.labels[v, u] == object_id) & (d > 0)
    flat, d, z = flat[hit], d[hit], z[hit]
    s = np.clip(d - z, -vol.trunc, vol.trunc)
    update = s > -vol.trunc
    flat, s = flat[update], s[update].astype(np.float32).astype(np.float64)

    sdf = vol.sdf.reshape(-1)
    weight = vol.weight.reshape(-1)
    w = weight[flat].astype(np.float64)
    sdf[flat] = ((w * sdf[flat] + s) / (w + 1.)).astype(np.float32)
    weight[flat] = (w + 1.).astype(np.float32)
    return vol


def freeze(vol):
    vol.frozen = True
    return vol


def _observed_cells(weight):
    ''' Cell mask indexed by the cell's lowest corner: all 8 corners observed. '''
    seen = weight > 0
    cells = np.zeros_like(seen)
    cells[:-1, :-1, :-1] = (seen[:-1, :-1, :-1] & seen[1:, :-1, :-1] & seen[:-1, 1:, :-1]
                            & seen[:-1, :-1, 1:] & seen[1:, 1:, :-1] & seen[1:, :-1, 1:]
                            & seen[:-1, 1:, 1:] & seen[1:, 1:, 1:])
    return cells


def extract_mesh(vol):
    ''' Zero level set of the fused SDF, in the model frame, faces wound outward. '''
    if min(vol.dims) < 2:
        raise EmptyMeshError('volume %s is too small for marching cubes' % (vol.dims,))
    cells = _observed_cells(vol.weight)
    observed = vol.sdf[vol.weight > 0]
    if not cells.any() or observed.min() >= 0 or observed.max() <= 0:
        raise EmptyMeshError('no zero crossing in the observed region')
    try:
        verts, faces, _, _ = measure.marching_cubes(
            vol.sdf, level=0., spacing=(vol.voxel_size,) * 3, mask=cells, allow_degenerate=False)
    except (ValueError, RuntimeError) as e:
        raise EmptyMeshError('marching cubes failed: %s' % e)
    if len(faces) == 0:
        raise EmptyMeshError('no zero crossing in the observed region')
    mesh = TriangleMesh(verts + vol.origin + 0.5 * vol.voxel_size, faces)

    # outward means along the direction of increasing signed distance
    grads = np.gradient(vol.sdf.astype(np.float64))
    centroids = (mesh.corners().mean(axis=1) - vol.origin) / vol.voxel_size - 0.5
    g = np.stack([map_coordinates(gi, centroids.T, order=1, mode='nearest') for gi in grads], axis=1)
    if np.sum(np.einsum('ij,ij->i', mesh.face_normals(), g)) < 0:
        mesh = mesh.flipped()
    return mesh


def dump_volume(vol, path):
    ''' One text header line, then float32 little-endian sdf and weight in C order. '''
    header = 'dims %d %d %d voxel_size %r origin %r %r %r trunc %r\n' % (
        vol.dims + (float(vol.voxel_size),) + tuple(float(o) for o in vol.origin) + (float(vol.trunc),))
    with open(path, 'wb') as f:
        f.write(header.encode('ascii'))
        f.write(np.ascontiguousarray(vol.sdf, dtype='<f4').tobytes())
        f.write(np.ascontiguousarray(vol.weight, dtype='<f4').tobytes())


def load_volume(path):
    with open(path, 'rb') as f:
        tok = f.readline().decode('ascii').split()
        body = f.read()
    if len(tok) != 12 or tok[0] != 'dims' or tok[4] != 'voxel_size' or tok[6] != 'origin' or tok[10] != 'trunc':
        raise InvalidInputError('%s: malformed volume header' % path)
    dims = tuple(int(x) for x in tok[1:4])
    n = int(np.prod(dims))
    values = np.frombuffer(body, dtype='<f4')
    if len(values) != 2 * n:
        raise InvalidInputError('%s: expected %d values, found %d' % (path, 2 * n, len(values)))
    sdf = values[:n].reshape(dims).astype(np.float32)
    weight = values[n:].reshape(dims).astype(np.float32)
    origin = [float(x) for x in tok[7:10]]
    return TsdfVolume(origin, float(tok[5]), dims, float(tok[11]), sdf, weight)
