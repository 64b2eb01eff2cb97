''' Utils for grasp evaluation: success predicate, Precision@k, AP_mu and AP '''

import json
import math
from dataclasses import dataclass

import numpy as np

from grasp.sampler import points_in_gripper
from geometry.cloud import build_tree
from sim.scene import gt_surface_samples
from utils.errors import InvalidInputError

DEFAULT_MU = (0.2, 0.4, 0.6, 0.8, 1.0, 1.2)


@dataclass(frozen=True)
class EvalConfig:
    mu_list: tuple = DEFAULT_MU
    k_max: int = 50

    def __post_init__(self):
        mu = tuple(float(m) for m in self.mu_list)
        if not mu or any(m <= 0 for m in mu) or any(b <= a for a, b in zip(mu, mu[1:])):
            raise InvalidInputError('friction coefficients must be positive and ascending, got %s' % (mu,))
        if self.k_max < 1:
            raise InvalidInputError('k_max must be >= 1')
        object.__setattr__(self, 'mu_list', mu)


class GroundTruthScene:
    ''' Evaluation view of a SceneModel from one camera.

        Holds dense world-frame samples of the object surfaces for collision
        tests; contact rays go through the scene's ray caster. Grasps arrive in
        the camera frame and are mapped to world with cam_pose.
    '''

    def __init__(self, scene, cam_pose, density=100000., seed=0):
        self.scene = scene
        self.cam_pose = cam_pose
        self.samples = gt_surface_samples(scene, density, seed=seed)
        self.tree = build_tree(self.samples.positions) if len(self.samples) else None

    def collides(self, g_world, gripper):
        for lo, hi in gripper.boxes(g_world.width):
            corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])
                                for z in (lo[2], hi[2])])
            if self.scene.ground_plane and np.any(g_world.pose.apply(corners)[:, 2] < 0):
                return True
        if self.tree is None:
            return False
        near = self.tree.query_radius(g_world.translation[None], r=gripper.reach(g_world.width))[0]
        if len(near) == 0:
            return False
        return bool(points_in_gripper(g_world, self.samples.positions[np.sort(near)], gripper).any())

    def contact_angle(self, g_world):
        ''' Worst angle (degrees) between a finger's push and its contact's inward normal,
            or None when the closing line does not hit one object twice within the width. '''
        y = g_world.closing
        half = g_world.width / 2.
        origins = np.stack([g_world.translation - half * y, g_world.translation + half * y])
        dirs = np.stack([y, -y])
        t_hit, ids, normals = self.scene.cast(origins, dirs)
        if not np.all(np.isfinite(t_hit)) or np.any(t_hit > g_world.width):
            return None
        if ids[0] < 1 or ids[0] != ids[1]:
            return None
        cos = np.einsum('ij,ij->i', -normals, dirs)
        return float(np.degrees(np.arccos(np.clip(cos, -1., 1.))).max())


def grasp_outcome(g, gt, gripper):
    ''' Contact angle in degrees of a camera-frame grasp, or None if it can never succeed. '''
    g_world = g.transformed(gt.cam_pose)
    if gt.collides(g_world, gripper):
        return None
    return gt.contact_angle(g_world)


def friction_ok(angle_deg, mu):
    return angle_deg is not None and angle_deg <= math.degrees(math.atan(mu)) + 1e-9


def evaluate_grasp(g, gt, mu, gripper):
    ''' Collision-free, two contacts on one object, both inside the friction cone of mu. '''
    return friction_ok(grasp_outcome(g, gt, gripper), mu)


def success_table(gs, gt, mu_list, gripper, k_max=None):
    ''' (len(top grasps), len(mu_list)) boolean success matrix. '''
    grasps = list(gs)[:k_max] if k_max else list(gs)
    angles = [grasp_outcome(g, gt, gripper) for g in grasps]
    return np.array([[friction_ok(a, mu) for mu in mu_list] for a in angles], dtype=bool).reshape(-1, len(mu_list))


def precision_curve(success, k_max):
    ''' Precision@k for k = 1..k_max from a ranked success column; missing ranks are failures. '''
    hits = np.zeros(k_max)
    n = min(len(success), k_max)
    hits[:n] = np.asarray(success[:n], dtype=np.float64)
    return np.cumsum(hits) / np.arange(1, k_max + 1)


def precision_at_k(gs, gt, mu, k, gripper):
    if k < 1:
        raise InvalidInputError('k must be >= 1')
    column = success_table(gs, gt, [mu], gripper, k_max=k)[:, 0]
    return float(precision_curve(column, k)[-1])


def ap_mu(gs, gt, mu, gripper, k_max=50):
    column = success_table(gs, gt, [mu], gripper, k_max=k_max)[:, 0]
    return float(precision_curve(column, k_max).mean())


def ap_report(success, cfg):
    ''' AP, AP_0.8, AP_0.4, per-mu AP_mu and per-k precision from a success table. '''
    curves = {mu: precision_curve(success[:, j], cfg.k_max) for j, mu in enumerate(cfg.mu_list)}
    ap_mus = {mu: float(c.mean()) for mu, c in curves.items()}
    report = {
        'AP': float(np.mean(list(ap_mus.values()))),
        'AP_mu': {'%.1f' % mu: v for mu, v in ap_mus.items()},
        'precision_at_k': {'%.1f' % mu: [float(x) for x in c] for mu, c in curves.items()},
    }
    for mu in (0.8, 0.4):
        key = 'AP_%.1f' % mu
        match = [m for m in cfg.mu_list if abs(m - mu) < 1e-9]
        report[key] = ap_mus[match[0]] if match else None
    return report


def evaluate_grasp_set(gs, gt, cfg, gripper):
    return ap_report(success_table(gs, gt, cfg.mu_list, gripper, k_max=cfg.k_max), cfg)


def ap(gs, gt, cfg, gripper):
    return evaluate_grasp_set(gs, gt, cfg, gripper)['AP']


def mean_reports(reports, cfg):
    ''' Frame-averaged report; averaging is linear so AP stays the mean of AP_mu. '''
    if not reports:
        return ap_report(np.zeros((0, len(cfg.mu_list)), dtype=bool), cfg)
    out = {'AP': float(np.mean([r['AP'] for r in reports]))}
    for key in ('AP_0.8', 'AP_0.4'):
        values = [r[key] for r in reports]
        out[key] = None if values[0] is None else float(np.mean(values))
    out['AP_mu'] = {m: float(np.mean([r['AP_mu'][m] for r in reports])) for m in reports[0]['AP_mu']}
    out['precision_at_k'] = {m: [float(x) for x in np.mean([r['precision_at_k'][m] for r in reports], axis=0)]
                             for m in reports[0]['precision_at_k']}
    return out


def write_report(report, path):
    with open(path, 'w') as f:
        json.dump(report, f, indent=2, sort_keys=True)


def format_table(rows, columns):
    ''' rows: {input name: {column: report}} -> human-readable AP table (percent). '''
    header = '%-16s' % 'Input' + ''.join('%-26s' % c for c in columns)
    sub = '%-16s' % '' + ''.join('%-26s' % 'AP / AP0.8 / AP0.4' for _ in columns)
    lines = [header, sub]
    for name, per_column in rows.items():
        cells = []
        for c in columns:
            r = per_column[c]
            cells.append('%-26s' % ('%.2f / %s / %s' % (
                100 * r['AP'],
                '-' if r['AP_0.8'] is None else '%.2f' % (100 * r['AP_0.8']),
                '-' if r['AP_0.4'] is None else '%.2f' % (100 * r['AP_0.4']))))
        lines.append('%-16s' % name + ''.join(cells))
    return '\n'.join(lines)
