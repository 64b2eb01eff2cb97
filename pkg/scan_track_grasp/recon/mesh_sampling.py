import numpy as np

from geometry.cloud import PointCloud
from utils.errors import InvalidInputError
from utils.misc import make_rng


def mesh_to_cloud(mesh, density, seed=0, label=None):
    ''' Area-weighted surface samples carrying their face normal.

        Every face receives max(1, round(area * density)) uniform barycentric
        samples, so tiny meshes still produce one point per face.
    '''
    if not density > 0:
        raise InvalidInputError('sampling density must be positive, got %r' % (density,))
    if mesh.is_empty():
        return PointCloud.empty(with_normals=True, with_labels=label is not None)
    areas = mesh.face_areas()
    # zero-area faces have no normal and receive no samples
    counts = np.where(areas > 1e-15, np.maximum(1, np.round(areas * density)), 0).astype(np.int64)
    face = np.repeat(np.arange(len(mesh)), counts)
    rng = make_rng(seed)
    r1 = np.sqrt(rng.random(len(face)))
    r2 = rng.random(len(face))
    c = mesh.corners()[face]
    points = ((1. - r1)[:, None] * c[:, 0] + (r1 * (1. - r2))[:, None] * c[:, 1]
              + (r1 * r2)[:, None] * c[:, 2])
    normals = mesh.face_normals()[face]
    labels = None if label is None else np.full(len(face), label, dtype=np.int32)
    return PointCloud(points, normals, labels)
