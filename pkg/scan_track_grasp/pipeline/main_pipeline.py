import os
import json
import time
from collections import OrderedDict

import jsonlines
from tensorboardX import SummaryWriter
from tqdm import tqdm

from utils.misc import set_random_seed, sha1_of_file, sha1_of_text
from utils.logger import Timer, write_to_record_file, timeSince
from utils.data import FrameDB, save_frames

from assembly.assembler import export_merged_scene
from grasp.eval_utils import format_table, write_report
from grasp.sampler import save_grasps
from pipeline.experiment import (INPUTS, bench, format_timing_table, run_experiment, scan_trajectory,
                                 scene_name, simulate_scene)
from pipeline.parser import parse_args, save_config, tracker_config
from pipeline.registry_io import load_registry, save_registry
from pipeline.stages import run_stage1, run_stage2_frame
from sim.render import save_trajectory
from sim.scene import load_scene_spec, save_scene_spec

SCAN_FILE = 'scan_frames.h5'
TEST_FILE = 'test_frames.h5'


def simulate(args, record_file):
    scene = load_scene_spec(args.scene[0])
    run = simulate_scene(scene, args)
    save_frames(os.path.join(args.output_dir, SCAN_FILE), run.scan_frames, scene.num_objects)
    save_frames(os.path.join(args.output_dir, TEST_FILE), run.test_frames, scene.num_objects,
                attrs={'n_static': args.test_n_azimuth, 'perturb_object': args.perturb_object,
                       'perturb_step': args.perturb_step})
    save_trajectory(scan_trajectory(args), os.path.join(args.output_dir, 'trajectory.txt'))
    save_trajectory([f.cam_pose for f in run.test_frames], os.path.join(args.output_dir, 'eval_trajectory.txt'))
    save_scene_spec(scene, os.path.join(args.output_dir, 'scene.txt'))
    write_to_record_file('%s: %d scan frames, %d test frames, %d objects' % (
        args.scene[0], len(run.scan_frames), len(run.test_frames), scene.num_objects), record_file)


def stage1(args, record_file):
    db = FrameDB(os.path.join(args.output_dir, SCAN_FILE))
    frames = db.frames()
    start = time.time()
    registry = run_stage1(frames, frames[0].mask, args, record_file)
    save_registry(registry, args.registry_dir)
    write_to_record_file('stage 1 done in %s, %d/%d objects tracked' % (
        timeSince(start, 1.), len(registry.tracked_ids()), len(registry)), record_file)


def stage2(args, record_file, writer):
    db = FrameDB(os.path.join(args.output_dir, TEST_FILE))
    registry = load_registry(args.registry_dir, tracker_config(args), db.num_objects)
    timer = Timer()
    with jsonlines.open(os.path.join(args.stage2_dir, 'timing.jsonl'), mode='w') as timing_file:
        for frame in tqdm(db.frames(), desc='stage2'):
            merged, grasps, row = run_stage2_frame(registry, frame, args, timer)
            export_merged_scene(merged, os.path.join(args.stage2_dir, 'merged_%05d.ply' % frame.index))
            save_grasps(grasps, os.path.join(args.stage2_dir, 'grasps_%05d.txt' % frame.index))
            timing_file.write(OrderedDict([('frame', frame.index), ('grasps', len(grasps))] + list(row.items())))
            for key, ms in row.items():
                writer.add_scalar('stage2/%s' % key.replace('/', '_'), ms, frame.index)

    means = timer.means(args.warmup)
    status = {'%d' % k: v for k, v in registry.status().items()}
    write_report({'timing': dict(means), 'status': status}, os.path.join(args.report_dir, 'stage2.json'))
    loss_str = 'stage 2 mean ms over %d frames (first %d excluded)\n' % (len(db), args.warmup)
    loss_str += ', '.join('%s: %.1f' % (k, v) for k, v in means.items())
    loss_str += '\n' + timer.show()
    write_to_record_file(loss_str + '\n', record_file)


def evaluate(args, record_file, writer):
    path = os.path.join(args.report_dir, 'eval_frames.jsonl')
    if os.path.exists(path):
        os.remove(path)
    reports = OrderedDict()
    for scene_file in args.scene:
        name = scene_name(scene_file)
        reports[name] = run_experiment(scene_file, args, name, record_file, writer)

    rows = OrderedDict((key, OrderedDict((name, r['inputs'][key]) for name, r in reports.items()))
                       for key in INPUTS)
    table = format_table(rows, list(reports))
    write_report({'scenes': reports, 'table': table}, os.path.join(args.report_dir, 'eval.json'))
    loss_str = table + '\n'
    for name, r in reports.items():
        loss_str += '%s coverage: %s\n' % (name, ', '.join('%s %.3f' % (k, r['coverage'][k]) for k in INPUTS))
    write_to_record_file(loss_str, record_file)


def benchmark(args, record_file, writer):
    report = bench(args, record_file)
    write_report(report, os.path.join(args.report_dir, 'bench.json'))
    for row in report['rows']:
        writer.add_scalar('bench/%s_total' % row['mode'], row['total'], row['objects'])
    fit = report['fit']
    loss_str = format_timing_table(report['rows']) + '\n'
    loss_str += 'sequential total ~ %.1f * M + %.1f ms' % (fit['slope_ms'], fit['intercept_ms'])
    if fit['r2'] is not None:
        loss_str += ', R2 %.4f' % fit['r2']
    write_to_record_file(loss_str + '\n', record_file)


def write_manifest(args, config_text):
    ''' Config hash and the sorted inventory of run artifacts; logs are not inventoried. '''
    files = []
    for root, dirs, names in os.walk(args.output_dir):
        dirs[:] = sorted(d for d in dirs if os.path.join(root, d) != args.log_dir)
        for name in sorted(names):
            path = os.path.join(root, name)
            rel = os.path.relpath(path, args.output_dir)
            if rel == 'manifest.json':
                continue
            files.append(OrderedDict([('path', rel), ('size', os.path.getsize(path)),
                                      ('sha1', sha1_of_file(path))]))
    manifest = OrderedDict([('command', args.command), ('config_sha1', sha1_of_text(config_text)),
                            ('files', sorted(files, key=lambda f: f['path']))])
    with open(os.path.join(args.output_dir, 'manifest.json'), 'w') as outf:
        json.dump(manifest, outf, indent=2)


def main():
    args = parse_args()
    set_random_seed(args.seed)

    with open(os.path.join(args.log_dir, '%s_args.json' % args.command), 'w') as outf:
        json.dump(vars(args), outf, indent=4, sort_keys=True)
    config_text = save_config(args, os.path.join(args.output_dir, 'config.txt'))
    record_file = os.path.join(args.log_dir, '%s.txt' % args.command)
    write_to_record_file(str(args) + '\n\n', record_file)

    if args.command == 'simulate':
        simulate(args, record_file)
    elif args.command == 'stage1':
        stage1(args, record_file)
    else:
        writer = SummaryWriter(log_dir=args.log_dir)
        if args.command == 'stage2':
            stage2(args, record_file, writer)
        elif args.command == 'eval':
            evaluate(args, record_file, writer)
        else:
            benchmark(args, record_file, writer)
        writer.close()

    write_manifest(args, config_text)


if __name__ == '__main__':
    main()
