''' Stage I registry on disk

    <registry>/registry.json            status, diagnostics and file names per object
    <registry>/object_XX.obj            mesh, model frame
    <registry>/object_XX_samples.ply    surface samples with normals
    <registry>/object_XX.tsdf           frozen volume dump
    <registry>/object_XX_trajectory.txt frame_index object_id tx ty tz r00..r22
    <registry>/keyframes.h5             keyframe pools, flat datasets prefixed oXX_
'''

import json
import os

import h5py
import numpy as np

from assembly.assembler import ObjectEntry, ObjectRegistry
from geometry.camera import DepthImage, InstanceMask
from geometry.cloud import PointCloud
from geometry.io import format_pose, parse_pose, read_obj, read_ply, write_obj, write_ply
from geometry.transforms import RigidTransform
from recon.tsdf import dump_volume, freeze, load_volume
from tracking.keyframes import KeyframeMemoryPool
from tracking.tracker import LOST, TRACKING, TrackerConfig, TrackState
from utils.errors import InvalidInputError

REGISTRY_FILE = 'registry.json'
KEYFRAME_FILE = 'keyframes.h5'


def _stem(object_id):
    return 'object_%02d' % object_id


def _prefix(object_id):
    return 'o%02d_' % object_id


def _dataset(f, name, data, compress=False):
    if compress:
        f.create_dataset(name, data=data, compression='gzip', compression_opts=4, track_times=False)
    else:
        f.create_dataset(name, data=data, track_times=False)


def save_trajectory_file(path, object_id, trajectory):
    with open(path, 'w') as f:
        for frame_index, pose in trajectory:
            f.write('%d %d %s\n' % (frame_index, object_id, format_pose(pose)))


def load_trajectory_file(path):
    trajectory = []
    with open(path) as f:
        for line in f:
            tok = line.split()
            if tok:
                trajectory.append((int(tok[0]), parse_pose(tok[2:])))
    return trajectory


def _write_pool(f, object_id, pool):
    ''' Keyframe clouds are concatenated with per-keyframe offsets; images keep only the object's pixels. '''
    p = _prefix(object_id)
    kfs = list(pool)
    counts = np.array([len(kf.object_cloud) for kf in kfs], dtype=np.int64)
    _dataset(f, p + 'offsets', np.concatenate([[0], np.cumsum(counts)]).astype(np.int64))
    _dataset(f, p + 'points', np.concatenate([kf.object_cloud.positions for kf in kfs]))
    _dataset(f, p + 'normals', np.concatenate([kf.object_cloud.normals for kf in kfs]))
    _dataset(f, p + 'poses', np.stack([kf.pose.matrix for kf in kfs]))
    _dataset(f, p + 'frame_index', np.array([kf.frame_index for kf in kfs], dtype=np.int64))
    edges = sorted((min(a, b), max(a, b), d['weight']) for a, b, d in pool.graph.edges(data=True))
    _dataset(f, p + 'edges', np.array(edges, dtype=np.float64).reshape(-1, 3))
    if all(kf.depth is not None for kf in kfs):
        own = [kf.mask.labels == object_id for kf in kfs]
        _dataset(f, p + 'depth', np.stack([np.where(m, kf.depth.values, 0.).astype(np.float32)
                                           for kf, m in zip(kfs, own)]), compress=True)
        _dataset(f, p + 'mask', np.stack(own).astype(np.uint8), compress=True)


def _read_pool(f, object_id, cfg, num_objects=None):
    p = _prefix(object_id)
    pool = KeyframeMemoryPool(cfg.theta_key_deg, cfg.d_key, cfg.K)
    offsets = f[p + 'offsets'][...]
    points = f[p + 'points'][...]
    normals = f[p + 'normals'][...]
    poses = f[p + 'poses'][...]
    frame_index = f[p + 'frame_index'][...]
    has_images = (p + 'depth') in f
    edges = {}
    for a, b, w in f[p + 'edges'][...]:
        edges.setdefault(int(max(a, b)), {})[int(min(a, b))] = float(w)
    for i in range(len(poses)):
        depth = mask = None
        if has_images:
            depth = DepthImage(f[p + 'depth'][i])
            mask = InstanceMask(f[p + 'mask'][i].astype(np.int32) * object_id, num_objects)
        cloud = PointCloud(points[offsets[i]:offsets[i + 1]], normals[offsets[i]:offsets[i + 1]])
        pool.add(int(frame_index[i]), cloud, RigidTransform.from_matrix(poses[i]), depth, mask,
                 links=edges.get(i))
    return pool


def save_registry(registry, registry_dir):
    ''' Write every entry; lost objects keep only their status and diagnostics. '''
    os.makedirs(registry_dir, exist_ok=True)
    index = {}
    with h5py.File(os.path.join(registry_dir, KEYFRAME_FILE), 'w') as f:
        for entry in registry:
            stem = _stem(entry.object_id)
            record = {'status': entry.status, 'diagnostics': list(entry.diagnostics)}
            if entry.mesh is not None:
                write_obj(os.path.join(registry_dir, stem + '.obj'), entry.mesh)
                record['mesh'] = stem + '.obj'
            if entry.samples is not None:
                write_ply(os.path.join(registry_dir, stem + '_samples.ply'), entry.samples)
                record['samples'] = stem + '_samples.ply'
            if entry.volume is not None:
                dump_volume(entry.volume, os.path.join(registry_dir, stem + '.tsdf'))
                record['volume'] = stem + '.tsdf'
            state = entry.state
            if state is not None:
                save_trajectory_file(os.path.join(registry_dir, stem + '_trajectory.txt'),
                                     entry.object_id, state.trajectory)
                record['trajectory'] = stem + '_trajectory.txt'
                record['pose'] = format_pose(state.pose)
                record['anchor_cam_pose'] = None if state.anchor_cam_pose is None else format_pose(state.anchor_cam_pose)
                record['keyframes'] = len(state.pool)
                record['degraded_refinements'] = state.degraded_refinements
                if len(state.pool):
                    _write_pool(f, entry.object_id, state.pool)
            index['%d' % entry.object_id] = record
    with open(os.path.join(registry_dir, REGISTRY_FILE), 'w') as f:
        json.dump({'objects': index}, f, indent=2, sort_keys=True)
    return index


def load_registry(registry_dir, cfg=TrackerConfig(), num_objects=None):
    ''' Rebuild entries with Stage II track states: frozen sample cloud as the model, restored pool. '''
    path = os.path.join(registry_dir, REGISTRY_FILE)
    if not os.path.exists(path):
        raise InvalidInputError('no registry at %s' % registry_dir)
    with open(path) as f:
        index = json.load(f)['objects']

    registry = ObjectRegistry()
    with h5py.File(os.path.join(registry_dir, KEYFRAME_FILE), 'r') as f:
        for key in sorted(index, key=int):
            object_id, record = int(key), index[key]
            entry = ObjectEntry(object_id, record['status'], diagnostics=list(record['diagnostics']))
            if 'mesh' in record:
                entry.mesh = read_obj(os.path.join(registry_dir, record['mesh']))
            if 'samples' in record:
                entry.samples, _ = read_ply(os.path.join(registry_dir, record['samples']))
            if 'volume' in record:
                entry.volume = freeze(load_volume(os.path.join(registry_dir, record['volume'])))
            if entry.status == TRACKING and _prefix(object_id) + 'poses' in f:
                pool = _read_pool(f, object_id, cfg, num_objects)
                state = TrackState(object_id, entry.samples, parse_pose(record['pose'].split()), pool, cfg)
                state.set_model(entry.samples, frozen=True)
                if record.get('anchor_cam_pose'):
                    state.anchor_cam_pose = parse_pose(record['anchor_cam_pose'].split())
                state.trajectory = load_trajectory_file(os.path.join(registry_dir, record['trajectory']))
                state.degraded_refinements = record.get('degraded_refinements', 0)
                entry.state = state
            elif entry.status == TRACKING:
                entry.status = LOST
                entry.diagnostics.append('registry has no keyframes for object %d' % object_id)
            registry.add(entry)
    return registry
