''' Text formats: ASCII PLY clouds, OBJ meshes and pose lines

All floats are written with fixed 6-decimal formatting so that identical
inputs give byte-identical files.
'''

import numpy as np

from geometry.cloud import PointCloud, TriangleMesh
from geometry.transforms import RigidTransform
from utils.errors import InvalidInputError


def _fmt(values):
    return ' '.join('%.6f' % v for v in values)


def write_ply(path, cloud, extra_int=None):
    ''' extra_int: optional {name: per-point int array} written after the label. '''
    extra_int = extra_int or {}
    n = len(cloud)
    header = ['ply', 'format ascii 1.0', 'element vertex %d' % n,
              'property float x', 'property float y', 'property float z']
    if cloud.has_normals:
        header += ['property float nx', 'property float ny', 'property float nz']
    if cloud.labels is not None:
        header += ['property int label']
    for name in extra_int:
        header += ['property int %s' % name]
    header += ['end_header']
    with open(path, 'w') as f:
        f.write('\n'.join(header) + '\n')
        for i in range(n):
            fields = [_fmt(cloud.positions[i])]
            if cloud.has_normals:
                fields.append(_fmt(cloud.normals[i]))
            if cloud.labels is not None:
                fields.append('%d' % cloud.labels[i])
            for values in extra_int.values():
                fields.append('%d' % values[i])
            f.write(' '.join(fields) + '\n')


def read_ply(path):
    ''' Returns (PointCloud, {extra int property: array}). '''
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != 'ply':
        raise InvalidInputError('%s is not a PLY file' % path)
    props, n, body = [], 0, None
    for i, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == 'format' and tok[1] != 'ascii':
            raise InvalidInputError('only ASCII PLY is supported')
        if tok[0] == 'element' and tok[1] == 'vertex':
            n = int(tok[2])
        elif tok[0] == 'property':
            props.append(tok[-1])
        elif tok[0] == 'end_header':
            body = i + 1
            break
    if body is None:
        raise InvalidInputError('%s: missing end_header' % path)
    data = np.array([l.split() for l in lines[body:body + n]], dtype=np.float64).reshape(n, len(props))
    col = {name: data[:, j] for j, name in enumerate(props)}
    positions = np.stack([col['x'], col['y'], col['z']], axis=1)
    normals = None
    if 'nx' in col:
        normals = np.stack([col['nx'], col['ny'], col['nz']], axis=1)
        norm = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = normals / np.where(norm > 0, norm, 1.)
    labels = col['label'].astype(np.int32) if 'label' in col else None
    extra = {k: v.astype(np.int32) for k, v in col.items()
             if k not in ('x', 'y', 'z', 'nx', 'ny', 'nz', 'label')}
    return PointCloud(positions, normals, labels), extra


def write_obj(path, mesh):
    with open(path, 'w') as f:
        for v in mesh.vertices:
            f.write('v %s\n' % _fmt(v))
        for t in mesh.triangles:
            f.write('f %d %d %d\n' % (t[0] + 1, t[1] + 1, t[2] + 1))


def read_obj(path):
    ''' v / f lines only; polygons are fan-triangulated, texture/normal indices dropped. '''
    verts, tris = [], []
    with open(path) as f:
        for line in f:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == 'v':
                verts.append([float(x) for x in tok[1:4]])
            elif tok[0] == 'f':
                idx = [int(x.split('/')[0]) for x in tok[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for j in range(1, len(idx) - 1):
                    tris.append([idx[0], idx[j], idx[j + 1]])
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))


def format_pose(T):
    return '%s %s' % (_fmt(T.translation), _fmt(T.rotation.reshape(-1)))


def parse_pose(fields):
    values = np.array([float(x) for x in fields], dtype=np.float64)
    if len(values) != 12:
        raise InvalidInputError('pose line needs 12 numbers, got %d' % len(values))
    return RigidTransform(values[3:].reshape(3, 3), values[:3])
