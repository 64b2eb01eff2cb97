''' Triangulated primitives centered at the origin, triangles wound outward '''

import numpy as np
import open3d as o3d

from geometry.cloud import TriangleMesh
from geometry.io import read_obj
from utils.errors import InvalidInputError

PRIMITIVE_TYPES = ('box', 'cylinder', 'sphere', 'mesh')


def _from_o3d(mesh):
    verts = np.asarray(mesh.vertices, dtype=np.float64)
    tris = np.asarray(mesh.triangles, dtype=np.int64)
    return TriangleMesh(verts, tris)


def orient_outward(mesh):
    ''' Flip faces whose normal points toward the centroid (valid for star-shaped meshes). '''
    c = mesh.corners()
    to_face = c.mean(axis=1) - mesh.vertices.mean(axis=0)
    inward = np.einsum('ij,ij->i', mesh.face_normals(), to_face) < 0
    return mesh.flipped(inward) if inward.any() else mesh


def make_box(size):
    sx, sy, sz = [float(s) for s in size]
    if min(sx, sy, sz) <= 0:
        raise InvalidInputError('box extents must be positive, got %r' % (size,))
    box = o3d.geometry.TriangleMesh.create_box(width=sx, height=sy, depth=sz)
    box.translate((-sx / 2., -sy / 2., -sz / 2.))
    return orient_outward(_from_o3d(box))


def make_cylinder(radius, height, resolution=32):
    if radius <= 0 or height <= 0:
        raise InvalidInputError('cylinder radius and height must be positive')
    cyl = o3d.geometry.TriangleMesh.create_cylinder(radius=float(radius), height=float(height),
                                                    resolution=int(resolution), split=1)
    return orient_outward(_from_o3d(cyl))


def make_sphere(radius, resolution=20):
    if radius <= 0:
        raise InvalidInputError('sphere radius must be positive')
    sphere = o3d.geometry.TriangleMesh.create_sphere(radius=float(radius), resolution=int(resolution))
    return orient_outward(_from_o3d(sphere))


def make_primitive(kind, size=None, radius=None, height=None, resolution=None, path=None):
    if kind == 'box':
        return make_box(size)
    if kind == 'cylinder':
        return make_cylinder(radius, height, resolution or 32)
    if kind == 'sphere':
        return make_sphere(radius, resolution or 20)
    if kind == 'mesh':
        mesh = read_obj(path)
        if mesh.is_empty():
            raise InvalidInputError('mesh file %s has no triangles' % path)
        return mesh
    raise InvalidInputError('unknown primitive type %r (choose from %s)' % (kind, ', '.join(PRIMITIVE_TYPES)))
