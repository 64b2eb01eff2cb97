''' Two-stage orchestration: scan once (Stage I), then track and complete (Stage II) '''

import itertools
import time
from multiprocessing.pool import ThreadPool

from tqdm import tqdm

from assembly.assembler import ObjectEntry, ObjectRegistry, merge_scene, reconstruct_objects
from geometry.cloud import PointCloud, crop_cloud, estimate_normals, transform_cloud, voxel_downsample
from geometry.transforms import RigidTransform
from grasp.sampler import sample_grasps
from pipeline.parser import gripper_model, sampler_params, tracker_config
from recon.mesh_sampling import mesh_to_cloud
from recon.tsdf import create_volume, extract_mesh, freeze, integrate
from sim.render import ScanFrame
from tracking.mask_prop import propagate_mask
from tracking.tracker import LOST, TRACKING, init_object, track_frame
from utils.errors import FrozenVolumeError, PipelineError
from utils.logger import Timer, write_to_record_file

STAGE2_KEYS = ('segmentation', 'tracking', 'assembly', 'grasp', 'total')


def map_objects(fn, items, parallel=False, workers=4):
    ''' starmap over per-object work; results come back in input order either way. '''
    items = list(items)
    if parallel and len(items) > 1:
        with ThreadPool(min(workers, len(items))) as pool:
            return pool.starmap(fn, items)
    return list(itertools.starmap(fn, items))


def _with_mask(frame, mask):
    return ScanFrame(frame.depth, mask, frame.intr, frame.cam_pose, frame.index)


def frame_mask(frame, states, args):
    ''' Oracle masks come with the frame; the propagation baseline predicts them from the tracks. '''
    if args.masks == 'oracle':
        return frame.mask
    predicted = {s.object_id: s.predict(frame, 'kinematic') for s in states if s.status == TRACKING}
    return propagate_mask(frame.depth, frame.intr, states, predicted, args.prop_tolerance,
                          args.prop_dilate, frame.mask.num_objects)


def _track(state, frame, prior=None):
    if state.status != TRACKING:
        return state, 0.
    start = time.perf_counter()
    track_frame(state, frame, state.predict(frame, prior) if prior else None)
    return state, (time.perf_counter() - start) * 1000.


def _fuse(state, intr, args):
    ''' Size a volume on the accumulated model, integrate every keyframe image, freeze, sample. '''
    volume = create_volume(state.model_cloud, args.voxel_size, args.trunc, args.padding)
    for kf in state.pool:
        kf_frame = ScanFrame(kf.depth, kf.mask, intr, RigidTransform.identity(), kf.frame_index)
        integrate(volume, kf_frame, state.object_id, kf.pose)
    mesh = extract_mesh(volume)
    freeze(volume)
    samples = mesh_to_cloud(mesh, args.sample_density, seed=args.seed + state.object_id,
                            label=state.object_id)
    return ObjectEntry(state.object_id, TRACKING, mesh, samples, volume, state)


def _fuse_or_lose(state, intr, args):
    if state.status != TRACKING:
        return ObjectEntry(state.object_id, LOST, state=state, diagnostics=list(state.diagnostics))
    try:
        return _fuse(state, intr, args)
    except PipelineError as e:
        state.mark_lost('fusion: %s' % e)
        return ObjectEntry(state.object_id, LOST, state=state, diagnostics=list(state.diagnostics))


def run_stage1(frames, init_mask, args, record_file=None, verbose=True):
    ''' Register every object of init_mask from one scan.

        Frames are ingested in order; per-object tracking and the final fusion
        run through map_objects. Objects that fail to initialize, lose track or
        give no mesh end up `lost` in the registry, never aborting the run.
    '''
    frames = list(frames)
    if not frames:
        raise PipelineError('stage 1 needs at least one frame')
    cfg = tracker_config(args)
    parallel = args.parallel_objects == 'on'
    first = _with_mask(frames[0], init_mask)

    registry = ObjectRegistry()
    expected = range(1, (init_mask.num_objects or 0) + 1)
    for object_id in expected:
        if object_id not in init_mask.object_ids():
            write_to_record_file('warning: object %d is not in the initial mask, excluded' % object_id,
                                 record_file, verbose)

    states = []
    for object_id in init_mask.object_ids():
        try:
            states.append(init_object(first, object_id, cfg))
        except PipelineError as e:
            write_to_record_file('object %d: init failed: %s' % (object_id, e), record_file, verbose)
            registry.add(ObjectEntry(object_id, LOST, diagnostics=['init: %s' % e]))

    for frame in tqdm(frames[1:], desc='stage1', disable=not verbose):
        live = [s for s in states if s.status == TRACKING]
        if not live:
            break
        frame = _with_mask(frame, frame_mask(frame, live, args))
        for state, _ in map_objects(_track, [(s, frame) for s in live], parallel, args.workers):
            if state.status == LOST:
                write_to_record_file('object %d: %s' % (state.object_id, state.diagnostics[-1]),
                                     record_file, verbose)

    entries = map_objects(_fuse_or_lose, [(s, frames[0].intr, args) for s in states], parallel, args.workers)
    for entry in entries:
        state = entry.state
        if state.degraded_refinements:
            entry.diagnostics.append('%d frames refined without any keyframe constraint' % state.degraded_refinements)
        write_to_record_file('object %d: %s, %d keyframes, %d frames tracked' % (
            entry.object_id, entry.status, len(state.pool), len(state.trajectory)), record_file, verbose)
        registry.add(entry)
    return registry


def enter_stage2(registry):
    ''' Freeze the reconstructions: the tracker model becomes the mesh samples and stops growing. '''
    for entry in registry:
        if entry.volume is not None and not entry.volume.frozen:
            freeze(entry.volume)
        if entry.usable and entry.state is not None:
            entry.state.set_model(entry.samples, frozen=True)
    return registry


def assert_frozen(registry):
    for entry in registry:
        if entry.volume is not None and not entry.volume.frozen:
            raise FrozenVolumeError('object %d reached stage 2 with an unfrozen volume' % entry.object_id)
        if entry.state is not None and entry.status == TRACKING and not entry.state.model_frozen:
            raise FrozenVolumeError('object %d reached stage 2 with a growing model' % entry.object_id)


def partial_cloud(frame, args):
    ''' Observed camera-frame cloud of the workspace, downsampled, with normals. '''
    center = frame.cam_pose.inverse().apply([args.scan_center])[0]
    cloud = crop_cloud(frame.full_cloud(), center, args.workspace_radius)
    if args.merge_voxel:
        cloud = voxel_downsample(cloud, args.merge_voxel)
    if len(cloud) < args.normal_k:
        return PointCloud.empty(with_normals=True, with_labels=True)
    return estimate_normals(cloud, args.normal_k)


def partial_scene(frame, args, partial=None):
    partial = partial if partial is not None else partial_cloud(frame, args)
    return merge_scene(partial, [], args.merge_voxel, frame.index)


def fully_visible_scene(frame, world_objects, args, partial=None):
    ''' Upper-bound input: the partial view completed with every view of the objects. '''
    partial = partial if partial is not None else partial_cloud(frame, args)
    objects = transform_cloud(world_objects, frame.cam_pose.inverse())
    return merge_scene(partial, [objects] if len(objects) else [], args.merge_voxel, frame.index)


def run_stage2_frame(registry, frame, args, timer=None):
    ''' One live frame: masks, per-object tracking, scene completion and grasps.

        Returns (MergedScene, GraspSet, timing row in ms). Objects that are
        lost, or lose track here, contribute nothing beyond the partial view.
    '''
    assert_frozen(registry)
    timer = timer or Timer()
    parallel = args.parallel_objects == 'on'
    states = registry.states()
    timer.tic('total')

    timer.tic('segmentation')
    frame = _with_mask(frame, frame_mask(frame, states, args))
    timer.toc('segmentation')

    timer.tic('tracking')
    results = map_objects(_track, [(s, frame, 'kinematic') for s in states], parallel, args.workers)
    timer.toc('tracking')
    for state, millis in results:
        timer.add('tracking/%d' % state.object_id, millis)
        entry = registry.get(state.object_id)
        if state.status == LOST and entry.status != LOST:
            entry.mark_lost(state.diagnostics[-1])

    timer.tic('assembly')
    poses = {s.object_id: s.pose for s in states if s.status == TRACKING}
    merged = merge_scene(partial_cloud(frame, args), reconstruct_objects(registry, poses),
                         args.merge_voxel, frame.index)
    timer.toc('assembly')

    timer.tic('grasp')
    grasps = sample_grasps(merged, gripper_model(args), sampler_params(args))
    timer.toc('grasp')

    timer.toc('total')
    row = timer.row()
    timer.step()
    return merged, grasps, row

