''' Simulated runs: scan + evaluation views, three-input AP comparison and the timing bench '''

import argparse
import math
import os
from collections import OrderedDict, defaultdict
from dataclasses import dataclass, field

import jsonlines
import numpy as np
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score
from tqdm import tqdm

from assembly.assembler import ObjectEntry, ObjectRegistry, world_coverage
from geometry.cloud import PointCloud, concatenate, transform_cloud
from geometry.transforms import RigidTransform, pose_error
from grasp.eval_utils import GroundTruthScene, ap_report, mean_reports, success_table
from grasp.sampler import grasp_nms, sample_grasps, save_grasps
from pipeline.parser import eval_config, gripper_model, intrinsics, sampler_params, tracker_config
from pipeline.stages import (STAGE2_KEYS, enter_stage2, fully_visible_scene, partial_cloud,
                             partial_scene, run_stage1, run_stage2_frame)
from recon.mesh_sampling import mesh_to_cloud
from sim.primitives import make_box
from sim.render import fully_visible_cloud, hemisphere_trajectory, render_sequence, ring_trajectory
from sim.scene import SceneModel, SceneObject, gt_surface_samples, load_scene_spec, perturb_objects
from tracking.tracker import TRACKING, init_object
from utils.logger import Timer, write_to_record_file

INPUTS = ('partial', 'merged', 'fully_visible')


@dataclass
class SimulatedRun:
    scene: SceneModel
    scan_frames: list
    test_frames: list
    # world-frame delta of every object at each test frame
    test_deltas: list = field(default_factory=list)

    def test_scene(self, i):
        return perturb_objects(self.scene, self.test_deltas[i]) if self.test_deltas[i] else self.scene


def scan_trajectory(args):
    return hemisphere_trajectory(args.scan_center, args.scan_radius, args.n_azimuth, args.n_elevation,
                                 args.azimuth_range_deg, args.min_elevation_deg, args.max_elevation_deg)


def eval_trajectory(args):
    # half a step off the scan azimuths so no evaluation view repeats a scan view
    return ring_trajectory(args.scan_center, args.scan_radius, args.test_n_azimuth, args.test_elevation_deg,
                           azimuth_offset_deg=180. / args.test_n_azimuth)


def simulate_scene(scene, args):
    ''' Scan frames, static evaluation views and the optional dynamic sequence.

        The dynamic sequence keeps the camera at the first evaluation view and
        moves `perturb_object` by perturb_step along world +x each frame.
    '''
    intr = intrinsics(args)
    scan = render_sequence(scene, scan_trajectory(args), intr, args.depth_noise, args.seed)
    views = eval_trajectory(args)
    test = render_sequence(scene, views, intr, args.depth_noise, args.seed + 1)
    deltas = [{} for _ in test]
    if args.perturb_object and args.perturb_frames:
        for k in range(1, args.perturb_frames + 1):
            delta = {args.perturb_object: RigidTransform.translate(k * args.perturb_step, 0., 0.)}
            moved = perturb_objects(scene, delta)
            test += render_sequence(moved, [views[0]], intr, args.depth_noise, args.seed + 1, len(test))
            deltas.append(delta)
    return SimulatedRun(scene, scan, test, deltas)


def ground_truth_pose(scan_cam0, cam_pose, delta=None):
    ''' Model -> camera pose of an object whose model frame is the first scan camera. '''
    delta = delta or RigidTransform.identity()
    return cam_pose.inverse() @ delta @ scan_cam0


def tracking_errors(registry, run, i):
    frame = run.test_frames[i]
    out = {}
    for entry in registry:
        if not entry.usable:
            continue
        truth = ground_truth_pose(run.scan_frames[0].cam_pose, frame.cam_pose,
                                  run.test_deltas[i].get(entry.object_id))
        rot, trans = pose_error(entry.state.pose, truth)
        c = entry.samples.centroid()
        drift = float(np.linalg.norm(entry.state.pose.apply([c])[0] - truth.apply([c])[0]))
        out['%d' % entry.object_id] = {'rotation_deg': float(rot), 'translation': float(trans), 'centroid': drift}
    return out


def moved_objects(world_objects, delta):
    ''' Apply per-object world deltas to a labelled world-frame cloud. '''
    if not delta or len(world_objects) == 0:
        return world_objects
    parts = []
    for object_id in np.unique(world_objects.labels):
        part = world_objects.select(world_objects.labels == object_id)
        if int(object_id) in delta:
            part = transform_cloud(part, delta[int(object_id)])
        parts.append(part)
    return concatenate(parts)


def score_grasps(grasps, gt, args):
    ''' NMS in score order, then the AP report of the survivors. '''
    gs = grasp_nms(grasps, args.nms_translation, args.nms_rotation)
    cfg = eval_config(args)
    return gs, ap_report(success_table(gs, gt, cfg.mu_list, gripper_model(args), k_max=cfg.k_max), cfg)


def scene_name(path):
    return os.path.splitext(os.path.basename(path))[0]


def run_experiment(scene, args, name='scene', record_file=None, writer=None, verbose=True):
    ''' Stage I on the scan, then per evaluation frame the AP of the partial,
        merged and fully visible inputs. `scene` is a SceneModel or a scene spec path.
        Returns the scene report. '''
    if isinstance(scene, str):
        name, scene = scene_name(scene), load_scene_spec(scene)
    run = simulate_scene(scene, args)
    status = OrderedDict()

    registry = run_stage1(run.scan_frames, run.scan_frames[0].mask, args, record_file, verbose)
    enter_stage2(registry)
    status['stage1'] = {'%d' % k: v for k, v in registry.status().items()}

    intr = intrinsics(args)
    fully_visible = PointCloud.empty(with_normals=True, with_labels=True)
    if scene.num_objects:
        fully_visible = fully_visible_cloud(scene, scan_trajectory(args), intr, args.dedup_voxel,
                                            args.normal_k, frames=run.scan_frames)

    grasp_dir = os.path.join(args.stage2_dir, name)
    os.makedirs(grasp_dir, exist_ok=True)
    timer = Timer()
    reports = defaultdict(list)
    coverages = defaultdict(list)
    errors = []
    rows = []
    for i, frame in enumerate(tqdm(run.test_frames, desc=name, disable=not verbose)):
        merged, merged_grasps, timing = run_stage2_frame(registry, frame, args, timer)
        partial = partial_cloud(frame, args)
        inputs = OrderedDict([
            ('partial', partial_scene(frame, args, partial)),
            ('merged', merged),
            ('fully_visible', fully_visible_scene(frame, moved_objects(fully_visible, run.test_deltas[i]),
                                                  args, partial)),
        ])
        gt_scene = run.test_scene(i)
        gt = GroundTruthScene(gt_scene, frame.cam_pose, args.gt_density, args.seed)
        gt_samples = gt_surface_samples(gt_scene, args.gt_density, exclude_downward=True, seed=args.seed)
        radius = 2. * (args.merge_voxel or args.dedup_voxel)

        row = OrderedDict([('scene', name), ('frame', frame.index)])
        for key, scene_input in inputs.items():
            grasps = merged_grasps if key == 'merged' else sample_grasps(
                scene_input, gripper_model(args), sampler_params(args))
            kept, report = score_grasps(grasps, gt, args)
            save_grasps(kept, os.path.join(grasp_dir, '%s_%05d.txt' % (key, frame.index)))
            reports[key].append(report)
            cov = world_coverage(scene_input.cloud, frame.cam_pose, gt_samples, radius) if len(gt_samples) else 0.
            coverages[key].append(cov)
            row[key] = {'AP': report['AP'], 'coverage': cov, 'grasps': len(kept)}
            if writer is not None:
                writer.add_scalar('%s/AP_%s' % (name, key), report['AP'], i)
                writer.add_scalar('%s/coverage_%s' % (name, key), cov, i)
        row['timing'] = timing
        row['tracking'] = tracking_errors(registry, run, i)
        errors.append(row['tracking'])
        rows.append(row)
        write_to_record_file('%s frame %d: %s' % (name, frame.index, ', '.join(
            '%s AP %.4f cov %.3f' % (k, row[k]['AP'], row[k]['coverage']) for k in INPUTS)), record_file, verbose)

    with jsonlines.open(os.path.join(args.report_dir, 'eval_frames.jsonl'), mode='a') as out:
        out.write_all(rows)

    status['stage2'] = {'%d' % k: v for k, v in registry.status().items()}
    worst = defaultdict(float)
    for per_frame in errors:
        for per_object in per_frame.values():
            for k, v in per_object.items():
                worst[k] = max(worst[k], v)
    report = OrderedDict([
        ('scene', name),
        ('frames', len(run.test_frames)),
        ('inputs', {k: mean_reports(reports[k], eval_config(args)) for k in INPUTS}),
        ('coverage', {k: float(np.mean(coverages[k])) if coverages[k] else 0. for k in INPUTS}),
        ('timing', dict(timer.means(args.warmup))),
        ('tracking_max_error', dict(worst)),
        ('status', status),
    ])
    if writer is not None:
        for key in INPUTS:
            writer.add_scalar('%s/mean_AP_%s' % (name, key), report['inputs'][key]['AP'], 0)
        for key, ms in report['timing'].items():
            writer.add_scalar('%s/time_%s' % (name, key.replace('/', '_')), ms, 0)
    return report


def bench_scene(num_objects, size=(0.06, 0.05, 0.04), spacing=0.12):
    ''' num_objects boxes on a square grid around the origin, resting on the ground. '''
    cols = int(math.ceil(math.sqrt(num_objects)))
    rows = int(math.ceil(num_objects / cols))
    objects = []
    for i in range(num_objects):
        r, c = divmod(i, cols)
        x = (c - (cols - 1) / 2.) * spacing
        y = (r - (rows - 1) / 2.) * spacing
        pose = RigidTransform.from_rotvec([0., 0., 0.3 * i], [x, y, size[2] / 2.])
        objects.append(SceneObject(i + 1, make_box(size), pose, 'box', {'size': list(size)}))
    return SceneModel(tuple(objects))


def registry_from_scene(scene, first_frame, args):
    ''' Stage II registry straight from the ground-truth meshes, with the model
        frame at first_frame's camera, so the bench times Stage II alone. '''
    cfg = tracker_config(args)
    to_model = first_frame.cam_pose.inverse()
    registry = ObjectRegistry()
    for o in scene.objects:
        state = init_object(first_frame, o.object_id, cfg)
        mesh = o.world_mesh().transformed(to_model)
        samples = mesh_to_cloud(mesh, args.sample_density, seed=args.seed + o.object_id, label=o.object_id)
        state.set_model(samples, frozen=True)
        registry.add(ObjectEntry(o.object_id, TRACKING, mesh, samples, None, state))
    return registry


def bench(args, record_file=None, verbose=True):
    ''' Stage II module timings for every object count, sequential and parallel.

        The sequential totals are fit with an affine model in the object count;
        r2 is None when fewer than three counts were measured.
    '''
    intr = intrinsics(args)
    init_pose = hemisphere_trajectory(args.scan_center, args.scan_radius, 1, 1)
    views = ring_trajectory(args.scan_center, args.scan_radius, args.bench_frames, args.test_elevation_deg)
    rows = []
    for m in args.bench_objects:
        scene = bench_scene(m)
        first = render_sequence(scene, init_pose, intr)[0]
        frames = render_sequence(scene, views, intr, start_index=1)
        for mode in ('off', 'on'):
            run_args = argparse.Namespace(**dict(vars(args), parallel_objects=mode, masks='oracle'))
            registry = registry_from_scene(scene, first, run_args)
            timer = Timer()
            for frame in tqdm(frames, desc='bench M=%d %s' % (m, mode), disable=not verbose):
                run_stage2_frame(registry, frame, run_args, timer)
            means = timer.means(args.warmup)
            row = OrderedDict([('objects', m), ('mode', 'parallel' if mode == 'on' else 'sequential')])
            row.update((k, float(means.get(k, 0.))) for k in STAGE2_KEYS)
            row['lost'] = len(registry) - len(registry.tracked_ids())
            rows.append(row)
            write_to_record_file(format_timing_table([row], header=False), record_file, verbose)

    sequential = [r for r in rows if r['mode'] == 'sequential']
    x = np.array([[r['objects']] for r in sequential], dtype=np.float64)
    y = np.array([r['total'] for r in sequential])
    fit = LinearRegression().fit(x, y)
    r2 = float(r2_score(y, fit.predict(x))) if len(np.unique(x)) >= 3 else None
    return OrderedDict([
        ('rows', rows),
        ('fit', OrderedDict([('slope_ms', float(fit.coef_[0])), ('intercept_ms', float(fit.intercept_)),
                             ('r2', r2)])),
    ])


def format_timing_table(rows, header=True):
    ''' Per-module mean milliseconds, one line per (object count, mode). '''
    keys = STAGE2_KEYS
    lines = []
    if header:
        lines.append('%-8s%-12s' % ('Objects', 'Mode') + ''.join('%-14s' % k for k in keys))
    for r in rows:
        lines.append('%-8d%-12s' % (r['objects'], r['mode']) + ''.join('%-14.1f' % r[k] for k in keys))
    return '\n'.join(lines)
