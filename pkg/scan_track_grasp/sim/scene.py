''' Ground-truth world: posed meshes over an optional ground plane

Scene spec files are flat key = value text:

    ground_plane = true

    [object]
    type = box
    size = 0.12 0.08 0.05
    translation = 0.0 0.0 0.025
    rotation = 0.0 0.0 0.3

`rotation` is an axis-angle vector in radians; `mesh` objects name an OBJ
`path` relative to the spec file.
'''

import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import open3d as o3d

from geometry.cloud import PointCloud, TriangleMesh, concatenate
from geometry.transforms import RigidTransform
from recon.mesh_sampling import mesh_to_cloud
from sim.primitives import PRIMITIVE_TYPES, make_primitive
from utils.errors import InvalidInputError

GROUND_HALF_EXTENT = 2.0
GROUND_ID = 0


@dataclass(frozen=True, eq=False)
class SceneObject:
    object_id: int
    mesh: TriangleMesh
    pose: RigidTransform
    kind: str = 'mesh'
    params: dict = field(default_factory=dict)

    def world_mesh(self):
        return self.mesh.transformed(self.pose)


@dataclass(frozen=True, eq=False)
class SceneModel:
    objects: tuple = ()
    ground_plane: bool = True

    def __post_init__(self):
        objects = tuple(sorted(self.objects, key=lambda o: o.object_id))
        ids = [o.object_id for o in objects]
        if ids != list(range(1, len(ids) + 1)):
            raise InvalidInputError('object ids must be unique and contiguous from 1, got %s' % ids)
        for o in objects:
            if o.mesh.is_empty():
                raise InvalidInputError('object %d has an empty mesh' % o.object_id)
        object.__setattr__(self, 'objects', objects)

    @property
    def num_objects(self):
        return len(self.objects)

    def object(self, object_id):
        if not 1 <= object_id <= len(self.objects):
            raise InvalidInputError('unknown object id %r' % (object_id,))
        return self.objects[object_id - 1]

    def is_empty(self):
        return not self.objects and not self.ground_plane

    def ground_mesh(self):
        e = GROUND_HALF_EXTENT
        verts = np.array([[-e, -e, 0.], [e, -e, 0.], [e, e, 0.], [-e, e, 0.]])
        return TriangleMesh(verts, np.array([[0, 1, 2], [0, 2, 3]]))

    @cached_property
    def raycaster(self):
        ''' (open3d RaycastingScene over world-frame meshes, geometry id -> object id) '''
        rc = o3d.t.geometry.RaycastingScene()
        id_map = {}
        meshes = [(o.object_id, o.world_mesh()) for o in self.objects]
        if self.ground_plane:
            meshes.append((GROUND_ID, self.ground_mesh()))
        for object_id, mesh in meshes:
            gid = rc.add_triangles(
                o3d.core.Tensor(np.ascontiguousarray(mesh.vertices, dtype=np.float32)),
                o3d.core.Tensor(np.ascontiguousarray(mesh.triangles, dtype=np.uint32)))
            id_map[int(gid)] = object_id
        return rc, id_map

    def cast(self, origins, directions):
        ''' Nearest hit per ray: (t_hit, object id or -1 on miss, unit hit normal). '''
        origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
        n = len(origins)
        if n == 0 or self.is_empty():
            return np.full(n, np.inf), np.full(n, -1, dtype=np.int32), np.zeros((n, 3))
        rc, id_map = self.raycaster
        rays = o3d.core.Tensor(np.concatenate([origins, directions], axis=1).astype(np.float32))
        ans = rc.cast_rays(rays)
        t_hit = ans['t_hit'].numpy().astype(np.float64)
        gids = ans['geometry_ids'].numpy().astype(np.int64)
        hit = np.isfinite(t_hit)
        lookup = np.full(max(id_map) + 1, -1, dtype=np.int32)
        for gid, oid in id_map.items():
            lookup[gid] = oid
        ids = np.full(n, -1, dtype=np.int32)
        ids[hit] = lookup[gids[hit]]
        normals = ans['primitive_normals'].numpy().astype(np.float64)
        normals[~hit] = 0.
        norm = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = normals / np.where(norm > 0, norm, 1.)
        t_hit[~hit] = np.inf
        return t_hit, ids, normals


def perturb_objects(scene, deltas):
    ''' Left-compose world-frame deltas {object_id: RigidTransform} onto object poses. '''
    for object_id in deltas:
        scene.object(object_id)
    objects = []
    for o in scene.objects:
        pose = deltas[o.object_id] @ o.pose if o.object_id in deltas else o.pose
        objects.append(SceneObject(o.object_id, o.mesh, pose, o.kind, o.params))
    return SceneModel(tuple(objects), scene.ground_plane)


def gt_surface_samples(scene, density, exclude_downward=False, seed=0):
    ''' World-frame surface samples of every object with analytic face normals.

        exclude_downward drops samples on faces resting on the ground, which
        no upper-hemisphere view can observe.
    '''
    clouds = []
    for o in scene.objects:
        cloud = mesh_to_cloud(o.world_mesh(), density, seed=seed + o.object_id, label=o.object_id)
        if exclude_downward and len(cloud):
            hidden = (cloud.normals[:, 2] < -0.99) & (cloud.positions[:, 2] < 1e-3)
            cloud = cloud.select(~hidden)
        clouds.append(cloud)
    if not clouds:
        return PointCloud.empty(with_normals=True, with_labels=True)
    return concatenate(clouds)


def _floats(text):
    return [float(x) for x in text.replace(',', ' ').split()]


def _parse_bool(text):
    value = text.strip().lower()
    if value not in ('true', 'false', '1', '0', 'yes', 'no', 'on', 'off'):
        raise InvalidInputError('not a boolean: %r' % text)
    return value in ('true', '1', 'yes', 'on')


def _build_object(object_id, block, base_dir):
    kind = block.get('type')
    if kind not in PRIMITIVE_TYPES:
        raise InvalidInputError('object %d: unknown type %r' % (object_id, kind))
    params = {}
    if 'size' in block:
        params['size'] = _floats(block['size'])
        if len(params['size']) != 3:
            raise InvalidInputError('object %d: box size needs 3 values' % object_id)
    for key in ('radius', 'height'):
        if key in block:
            params[key] = float(block[key])
    if 'resolution' in block:
        params['resolution'] = int(block['resolution'])
    if 'path' in block:
        path = block['path']
        params['path'] = path if os.path.isabs(path) else os.path.join(base_dir, path)
    mesh = make_primitive(kind, **params)
    translation = _floats(block.get('translation', '0 0 0'))
    rotation = _floats(block.get('rotation', '0 0 0'))
    if len(translation) != 3 or len(rotation) != 3:
        raise InvalidInputError('object %d: translation and rotation need 3 values each' % object_id)
    return SceneObject(object_id, mesh, RigidTransform.from_rotvec(rotation, translation), kind, params)


def load_scene_spec(path):
    ground_plane = True
    blocks = []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if line == '[object]':
                blocks.append({})
                continue
            if '=' not in line:
                raise InvalidInputError('%s:%d: expected key = value' % (path, lineno))
            key, value = [s.strip() for s in line.split('=', 1)]
            if blocks:
                blocks[-1][key] = value
            elif key == 'ground_plane':
                ground_plane = _parse_bool(value)
            else:
                raise InvalidInputError('%s:%d: unknown scene key %r' % (path, lineno, key))
    base_dir = os.path.dirname(os.path.abspath(path))
    objects = [_build_object(i + 1, b, base_dir) for i, b in enumerate(blocks)]
    return SceneModel(tuple(objects), ground_plane)


def save_scene_spec(scene, path):
    lines = ['ground_plane = %s' % ('true' if scene.ground_plane else 'false')]
    for o in scene.objects:
        lines += ['', '[object]', 'type = %s' % o.kind]
        for key in ('size', 'radius', 'height', 'resolution', 'path'):
            if key not in o.params:
                continue
            value = o.params[key]
            if key == 'size':
                value = ' '.join('%.6f' % v for v in value)
            elif key in ('radius', 'height'):
                value = '%.6f' % value
            lines.append('%s = %s' % (key, value))
        lines.append('translation = %s' % ' '.join('%.6f' % v for v in o.pose.translation))
        lines.append('rotation = %s' % ' '.join('%.6f' % v for v in o.pose.as_rotvec()))
    with open(path, 'w') as f:
        f.write('\n'.join(lines) + '\n')
