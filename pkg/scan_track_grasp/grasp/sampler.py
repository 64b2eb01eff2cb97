''' Antipodal parallel-jaw grasp sampling on camera-frame clouds

Grasp frame columns: x = approach (direction the hand moves), y = closing
axis, z = finger axis. The fingers are centered on the grasp point along x,
the palm sits behind them.
'''

import math
from dataclasses import dataclass

import numpy as np

from geometry.cloud import PointCloud, build_tree, estimate_normals
from geometry.io import format_pose, parse_pose
from geometry.transforms import RigidTransform, geodesic_angle
from utils.errors import InvalidInputError
from utils.misc import sha1_of_text

FLIP_CLOSING = np.diag([1., -1., -1.])


@dataclass(frozen=True)
class GripperModel:
    w_max: float = 0.08
    finger_depth: float = 0.04
    finger_thickness: float = 0.01
    palm_depth: float = 0.02
    finger_height: float = 0.01

    def __post_init__(self):
        for name in ('w_max', 'finger_depth', 'finger_thickness', 'palm_depth', 'finger_height'):
            if not getattr(self, name) > 0:
                raise InvalidInputError('gripper %s must be positive' % name)

    def reach(self, width):
        ''' Radius of a ball around the grasp center containing the whole hand. '''
        return math.sqrt((self.finger_depth / 2. + self.palm_depth) ** 2
                         + (width / 2. + self.finger_thickness) ** 2 + (self.finger_height / 2.) ** 2)

    def boxes(self, width):
        ''' (lo, hi) corners of the two finger boxes and the palm box, grasp frame. '''
        fd, thk, fh = self.finger_depth / 2., self.finger_thickness, self.finger_height / 2.
        half = width / 2.
        return [
            (np.array([-fd, half, -fh]), np.array([fd, half + thk, fh])),
            (np.array([-fd, -half - thk, -fh]), np.array([fd, -half, fh])),
            (np.array([-fd - self.palm_depth, -half - thk, -fh]), np.array([-fd, half + thk, fh])),
        ]


@dataclass(frozen=True, eq=False)
class GraspPose:
    rotation: np.ndarray
    translation: np.ndarray
    width: float
    score: float = 0.

    def __post_init__(self):
        T = RigidTransform(self.rotation, self.translation)
        if not self.width >= 0:
            raise InvalidInputError('grasp width must be >= 0, got %r' % (self.width,))
        object.__setattr__(self, 'rotation', T.rotation)
        object.__setattr__(self, 'translation', T.translation)
        object.__setattr__(self, 'width', float(self.width))
        object.__setattr__(self, 'score', float(self.score))

    @property
    def approach(self):
        return self.rotation[:, 0]

    @property
    def closing(self):
        return self.rotation[:, 1]

    @property
    def pose(self):
        return RigidTransform(self.rotation, self.translation)

    def transformed(self, T):
        moved = T @ self.pose
        return GraspPose(moved.rotation, moved.translation, self.width, self.score)

    def to_line(self):
        return '%.6f %.6f %s' % (self.score, self.width, format_pose(self.pose))

    @property
    def key(self):
        return sha1_of_text(self.to_line())


@dataclass(frozen=True, eq=False)
class GraspSet:
    grasps: tuple = ()

    def __post_init__(self):
        ordered = sorted(self.grasps, key=lambda g: (-g.score, g.key))
        object.__setattr__(self, 'grasps', tuple(ordered))

    def __len__(self):
        return len(self.grasps)

    def __iter__(self):
        return iter(self.grasps)

    def __getitem__(self, i):
        return self.grasps[i]

    def top(self, k):
        return GraspSet(self.grasps[:k])

    def transformed(self, T):
        return GraspSet(tuple(g.transformed(T) for g in self.grasps))


def _points(scene):
    if isinstance(scene, PointCloud):
        return scene.positions
    if hasattr(scene, 'cloud'):
        return scene.cloud.positions
    return np.asarray(scene, dtype=np.float64).reshape(-1, 3)


def points_in_gripper(g, points, gripper):
    ''' Mask of points inside either finger or the palm. Points between the fingers are not inside. '''
    local = (np.asarray(points) - g.translation) @ g.rotation
    inside = np.zeros(len(local), dtype=bool)
    for lo, hi in gripper.boxes(g.width):
        inside |= np.all((local >= lo) & (local <= hi), axis=1)
    return inside


def collision_check(g, scene, gripper, tree=None):
    ''' True when any scene point lies inside the hand. '''
    points = _points(scene)
    if len(points) == 0:
        return False
    if tree is not None:
        near = tree.query_radius(g.translation[None], r=gripper.reach(g.width))[0]
        points = points[np.sort(near)]
    return bool(points_in_gripper(g, points, gripper).any())


@dataclass(frozen=True)
class SamplerParams:
    alpha_deg: float = 30.
    clearance: float = 0.005
    n_keep: int = 200
    max_seeds: int = 2000
    cylinder_radius: float = 0.002
    min_width: float = 0.002
    normal_k: int = 10
    min_points: int = 100


def _angle(a, b):
    return math.degrees(math.acos(max(-1., min(1., float(np.dot(a, b))))))


def _grasp_frame(p1, p2, closing):
    ''' Rotation with the approach as close to the viewing ray as the closing axis allows. '''
    view = (p1 + p2) / 2.
    view = view / np.linalg.norm(view)
    approach = view - np.dot(view, closing) * closing
    norm = np.linalg.norm(approach)
    if norm < 1e-6:
        return None
    approach /= norm
    return np.stack([approach, closing, np.cross(approach, closing)], axis=1)


def sample_grasps(scene, gripper=GripperModel(), params=SamplerParams()):
    ''' Antipodal grasps on a camera-frame cloud (MergedScene or PointCloud).

        Each stride-selected seed looks for partners inside a thin cylinder
        along its inward normal, takes the nearest surface it crosses, and
        keeps the best antipodal pair that fits the hand without collision.
    '''
    cloud = scene.cloud if hasattr(scene, 'cloud') else scene
    if len(cloud) < params.min_points:
        return GraspSet()
    if not cloud.has_normals:
        cloud = estimate_normals(cloud, params.normal_k)
    pos, nrm = cloud.positions, cloud.normals
    tree = build_tree(pos)
    stride = max(1, int(math.ceil(len(pos) / params.max_seeds)))
    seeds = np.arange(0, len(pos), stride)
    reach = gripper.w_max - 2. * params.clearance
    neighbourhoods = tree.query_radius(pos[seeds], r=reach)

    grasps = []
    for i, nbrs in zip(seeds, neighbourhoods):
        p1, n1 = pos[i], nrm[i]
        nbrs = np.sort(nbrs)
        offset = p1 - pos[nbrs]
        axial = offset @ n1
        radial = np.linalg.norm(offset - axial[:, None] * n1, axis=1)
        ok = (axial > params.min_width) & (radial <= params.cylinder_radius)
        if not ok.any():
            continue
        cand, axial = nbrs[ok], axial[ok]
        near = axial <= axial.min() + 2. * params.cylinder_radius
        best = None
        for j in cand[near]:
            p2, n2 = pos[j], nrm[j]
            d = p1 - p2
            dist = np.linalg.norm(d)
            d = d / dist
            a1, a2 = _angle(n1, d), _angle(n2, -d)
            if max(a1, a2) > params.alpha_deg:
                continue
            width = dist + 2. * params.clearance
            if width > gripper.w_max:
                continue
            score = 1. - max(a1, a2) / params.alpha_deg
            if best is None or score > best[0]:
                best = (score, j, width)
        if best is None:
            continue
        score, j, width = best
        p2 = pos[j]
        closing = (p2 - p1) / np.linalg.norm(p2 - p1)
        rotation = _grasp_frame(p1, p2, closing)
        if rotation is None:
            continue
        g = GraspPose(rotation, (p1 + p2) / 2., width, score)
        if collision_check(g, pos, gripper, tree=tree):
            continue
        grasps.append(g)
    return GraspSet(tuple(grasps)).top(params.n_keep)


def grasp_rotation_distance(a, b):
    ''' Geodesic angle (degrees) modulo swapping the two fingers. '''
    flipped = RigidTransform(b.rotation @ FLIP_CLOSING, b.translation)
    return math.degrees(min(geodesic_angle(a.pose, b.pose), geodesic_angle(a.pose, flipped)))


def grasp_nms(gs, translation_threshold=0.03, rotation_threshold_deg=30.):
    ''' Greedy suppression in score order of grasps near an already kept one. '''
    kept = []
    for g in gs:
        close = any(np.linalg.norm(g.translation - k.translation) < translation_threshold
                    and grasp_rotation_distance(g, k) < rotation_threshold_deg for k in kept)
        if not close:
            kept.append(g)
    return GraspSet(tuple(kept))


def save_grasps(gs, path):
    with open(path, 'w') as f:
        for g in gs:
            f.write(g.to_line() + '\n')


def load_grasps(path):
    grasps = []
    with open(path) as f:
        for line in f:
            tok = line.split()
            if not tok:
                continue
            if len(tok) != 14:
                raise InvalidInputError('%s: grasp line needs 14 numbers, got %d' % (path, len(tok)))
            pose = parse_pose(tok[2:])
            grasps.append(GraspPose(pose.rotation, pose.translation, float(tok[1]), float(tok[0])))
    return GraspSet(tuple(grasps))
