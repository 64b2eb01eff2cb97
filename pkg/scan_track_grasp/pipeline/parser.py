import argparse
import os

from geometry.camera import CameraIntrinsics
from grasp.eval_utils import EvalConfig
from grasp.sampler import GripperModel, SamplerParams
from tracking.icp import IcpParams
from tracking.tracker import MOTION_PRIORS, TrackerConfig
from utils.errors import InvalidInputError

COMMANDS = ('simulate', 'stage1', 'stage2', 'eval', 'bench')
# derived by postprocess_args, never read from a config file
DERIVED_KEYS = ('command', 'config', 'log_dir', 'registry_dir', 'stage2_dir', 'report_dir')


def build_parser():
    parser = argparse.ArgumentParser(description="scan once, then track: reconstruction for 6-DoF grasping")

    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', type=str, default=None, help='flat key = value file')
    parser.add_argument('--scene', type=str, nargs='+', default=['scenes/three_primitives.txt'])
    parser.add_argument('--out', dest='output_dir', type=str, default='runs/default', help='run directory')
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--masks', choices=['oracle', 'propagated'], default='oracle')
    parser.add_argument('--parallel_objects', '--parallel-objects', choices=['on', 'off'], default='off')
    parser.add_argument('--workers', type=int, default=4)

    # Camera
    parser.add_argument('--fx', type=float, default=277.)
    parser.add_argument('--fy', type=float, default=277.)
    parser.add_argument('--cx', type=float, default=160.)
    parser.add_argument('--cy', type=float, default=120.)
    parser.add_argument('--width', type=int, default=320)
    parser.add_argument('--height', type=int, default=240)
    parser.add_argument('--depth_noise', type=float, default=0., help='gaussian depth noise sigma (m)')

    # Scan trajectory (Stage I) and evaluation views (Stage II)
    parser.add_argument('--scan_center', type=float, nargs=3, default=[0., 0., 0.03])
    parser.add_argument('--scan_radius', type=float, default=0.5)
    parser.add_argument('--n_azimuth', type=int, default=64)
    parser.add_argument('--n_elevation', type=int, default=4)
    parser.add_argument('--azimuth_range_deg', type=float, default=360.)
    parser.add_argument('--min_elevation_deg', type=float, default=20.)
    parser.add_argument('--max_elevation_deg', type=float, default=80.)
    parser.add_argument('--test_n_azimuth', type=int, default=8)
    parser.add_argument('--test_elevation_deg', type=float, default=35.)
    parser.add_argument('--perturb_object', type=int, default=0, help='object moved in the dynamic sequence, 0 = none')
    parser.add_argument('--perturb_step', type=float, default=0.01)
    parser.add_argument('--perturb_frames', type=int, default=5)

    # Tracking
    parser.add_argument('--theta_key', type=float, default=10., help='keyframe rotation threshold (deg)')
    parser.add_argument('--d_key', type=float, default=0.05)
    parser.add_argument('--pool_k', type=int, default=3)
    parser.add_argument('--d_corr', type=float, default=0.02)
    parser.add_argument('--icp_eps', type=float, default=1e-6)
    parser.add_argument('--icp_max_iter', type=int, default=30)
    parser.add_argument('--f_min', type=float, default=0.3)
    parser.add_argument('--n_min', type=int, default=50)
    parser.add_argument('--max_misses', type=int, default=5)
    parser.add_argument('--motion_prior', choices=MOTION_PRIORS, default='kinematic')
    parser.add_argument('--no_pool', action='store_true', default=False)
    parser.add_argument('--model_voxel', type=float, default=0.002)
    parser.add_argument('--normal_k', type=int, default=10)
    parser.add_argument('--prop_tolerance', type=float, default=0.01)
    parser.add_argument('--prop_dilate', type=int, default=2)

    # Reconstruction
    parser.add_argument('--voxel_size', type=float, default=0.005)
    parser.add_argument('--trunc', type=float, default=0.015)
    parser.add_argument('--padding', type=float, default=0.02)
    parser.add_argument('--sample_density', type=float, default=100000., help='mesh samples per m^2')

    # Scene assembly
    parser.add_argument('--merge_voxel', type=float, default=0.003, help='0 = plain concatenation')
    parser.add_argument('--dedup_voxel', type=float, default=0.003)
    parser.add_argument('--workspace_radius', type=float, default=0.3)

    # Grasping
    parser.add_argument('--w_max', type=float, default=0.08)
    parser.add_argument('--finger_depth', type=float, default=0.04)
    parser.add_argument('--finger_thickness', type=float, default=0.01)
    parser.add_argument('--palm_depth', type=float, default=0.02)
    parser.add_argument('--finger_height', type=float, default=0.01)
    parser.add_argument('--alpha_gen', type=float, default=30.)
    parser.add_argument('--clearance', type=float, default=0.005)
    parser.add_argument('--n_keep', type=int, default=200)
    parser.add_argument('--max_seeds', type=int, default=2000)

    # Evaluation
    parser.add_argument('--mu_list', type=float, nargs='+', default=[0.2, 0.4, 0.6, 0.8, 1.0, 1.2])
    parser.add_argument('--k_max', type=int, default=50)
    parser.add_argument('--nms_translation', type=float, default=0.03)
    parser.add_argument('--nms_rotation', type=float, default=30.)
    parser.add_argument('--gt_density', type=float, default=100000.)

    # Timing
    parser.add_argument('--warmup', type=int, default=3, help='frames excluded from timing means')
    parser.add_argument('--bench_frames', type=int, default=8)
    parser.add_argument('--bench_objects', type=int, nargs='+', default=[1, 2, 4])
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        parser.set_defaults(**load_config(args.config, parser))
        args = parser.parse_args(argv)

    validate_args(args)
    args = postprocess_args(args)

    return args


def postprocess_args(args):
    # Build paths
    args.log_dir = os.path.join(args.output_dir, 'logs')
    args.registry_dir = os.path.join(args.output_dir, 'registry')
    args.stage2_dir = os.path.join(args.output_dir, 'stage2')
    args.report_dir = os.path.join(args.output_dir, 'reports')

    os.makedirs(args.output_dir, exist_ok=True)
    os.makedirs(args.log_dir, exist_ok=True)
    os.makedirs(args.registry_dir, exist_ok=True)
    os.makedirs(args.stage2_dir, exist_ok=True)
    os.makedirs(args.report_dir, exist_ok=True)

    return args


def _format_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if value is None:
        return 'none'
    if isinstance(value, str):
        return value
    if isinstance(value, (list, tuple)):
        return ' '.join(_format_value(v) for v in value)
    return repr(value)


def save_config(args, path):
    ''' Every non-derived setting as `key = value`, sorted, floats via repr. '''
    items = sorted((k, v) for k, v in vars(args).items() if k not in DERIVED_KEYS)
    text = ''.join('%s = %s\n' % (k, _format_value(v)) for k, v in items)
    with open(path, 'w') as f:
        f.write(text)
    return text


def _convert(action, text):
    tokens = text.split()
    if isinstance(action, argparse._StoreTrueAction):
        if text.strip().lower() not in ('true', 'false'):
            raise InvalidInputError('%s expects true or false, got %r' % (action.dest, text))
        return text.strip().lower() == 'true'
    if text.strip().lower() == 'none':
        return None
    convert = action.type or str
    if action.nargs in ('+', '*') or isinstance(action.nargs, int):
        values = [convert(t) for t in tokens]
    else:
        values = convert(text.strip())
    if action.choices is not None:
        for v in values if isinstance(values, list) else [values]:
            if v not in action.choices:
                raise InvalidInputError('%s = %r is not one of %s' % (action.dest, v, list(action.choices)))
    return values


def load_config(path, parser=None):
    ''' Parse a flat `key = value` file into typed parser defaults. '''
    parser = parser or build_parser()
    actions = {a.dest: a for a in parser._actions}
    values = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise InvalidInputError('%s:%d: expected key = value' % (path, lineno))
            key, value = [s.strip() for s in line.split('=', 1)]
            if key not in actions or key in DERIVED_KEYS:
                raise InvalidInputError('%s:%d: unknown config key %r' % (path, lineno, key))
            try:
                values[key] = _convert(actions[key], value)
            except ValueError as e:
                raise InvalidInputError('%s:%d: bad value for %s: %s' % (path, lineno, key, e))
    return values


def validate_args(args):
    def check(ok, key, what):
        if not ok:
            raise InvalidInputError('%s = %r: %s' % (key, getattr(args, key), what))

    for key in ('fx', 'fy', 'scan_radius', 'd_key', 'd_corr', 'icp_eps', 'voxel_size',
                'sample_density', 'dedup_voxel', 'workspace_radius', 'w_max', 'finger_depth',
                'finger_thickness', 'palm_depth', 'finger_height', 'alpha_gen', 'theta_key',
                'model_voxel', 'gt_density', 'nms_translation', 'nms_rotation', 'prop_tolerance'):
        check(getattr(args, key) > 0, key, 'must be positive')
    check(args.padding >= 0, 'padding', 'must be >= 0')
    check(0 < args.cx < args.width, 'cx', 'must lie inside the image')
    check(0 < args.cy < args.height, 'cy', 'must lie inside the image')
    for key in ('n_azimuth', 'n_elevation', 'test_n_azimuth', 'pool_k', 'icp_max_iter', 'n_keep',
                'max_seeds', 'k_max', 'workers', 'bench_frames'):
        check(getattr(args, key) >= 1, key, 'must be >= 1')
    check(args.normal_k >= 3, 'normal_k', 'must be >= 3')
    check(args.n_min >= 1, 'n_min', 'must be >= 1')
    for key in ('max_misses', 'warmup', 'perturb_frames', 'perturb_object', 'prop_dilate'):
        check(getattr(args, key) >= 0, key, 'must be >= 0')
    check(0 < args.azimuth_range_deg <= 360, 'azimuth_range_deg', 'must be in (0, 360]')
    check(0 <= args.min_elevation_deg <= args.max_elevation_deg <= 90, 'min_elevation_deg',
          'elevation band must satisfy 0 <= min <= max <= 90')
    check(0 < args.test_elevation_deg <= 90, 'test_elevation_deg', 'must be in (0, 90]')
    check(args.trunc >= args.voxel_size, 'trunc', 'must be >= voxel_size')
    check(0 < args.f_min <= 1, 'f_min', 'must be in (0, 1]')
    check(args.depth_noise >= 0, 'depth_noise', 'must be >= 0')
    check(args.merge_voxel >= 0, 'merge_voxel', 'must be >= 0')
    check(args.clearance >= 0, 'clearance', 'must be >= 0')
    check(2 * args.clearance < args.w_max, 'clearance', 'two clearances must fit inside w_max')
    check(all(b > a for a, b in zip(args.mu_list, args.mu_list[1:])) and min(args.mu_list) > 0,
          'mu_list', 'must be positive and ascending')
    check(all(m >= 1 for m in args.bench_objects), 'bench_objects', 'object counts must be >= 1')
    return args


def intrinsics(args):
    return CameraIntrinsics(args.fx, args.fy, args.cx, args.cy, args.width, args.height)


def tracker_config(args):
    icp = IcpParams(d_corr=args.d_corr, max_iter=args.icp_max_iter, eps=args.icp_eps, f_min=args.f_min)
    return TrackerConfig(theta_key_deg=args.theta_key, d_key=args.d_key, K=args.pool_k, icp=icp,
                         n_min=args.n_min, normal_k=args.normal_k, max_misses=args.max_misses,
                         motion_prior=args.motion_prior, use_pool=not args.no_pool,
                         model_voxel=args.model_voxel)


def gripper_model(args):
    return GripperModel(args.w_max, args.finger_depth, args.finger_thickness, args.palm_depth,
                        args.finger_height)


def sampler_params(args):
    return SamplerParams(alpha_deg=args.alpha_gen, clearance=args.clearance, n_keep=args.n_keep,
                         max_seeds=args.max_seeds, normal_k=args.normal_k)


def eval_config(args):
    return EvalConfig(tuple(args.mu_list), args.k_max)
