import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

SRC_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if SRC_ROOT not in sys.path:
    sys.path.insert(0, SRC_ROOT)

from geometry.camera import CameraIntrinsics  # noqa: E402
from geometry.transforms import RigidTransform  # noqa: E402
from pipeline.parser import parse_args  # noqa: E402
from sim.primitives import make_box  # noqa: E402
from sim.scene import SceneModel, SceneObject, load_scene_spec  # noqa: E402

settings.register_profile('default', max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile('ci', max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get('HYPOTHESIS_PROFILE', 'default'))

SCENE_DIR = os.path.join(SRC_ROOT, 'scenes')


@pytest.fixture
def intr():
    return CameraIntrinsics.default()


def box_scene(size=(0.12, 0.08, 0.05), yaw=0.3, xy=(0., 0.), ground_plane=True):
    pose = RigidTransform.from_rotvec([0., 0., yaw], [xy[0], xy[1], size[2] / 2.])
    return SceneModel((SceneObject(1, make_box(size), pose, 'box', {'size': list(size)}),), ground_plane)


@pytest.fixture
def single_box():
    return box_scene()


@pytest.fixture
def three_primitives():
    return load_scene_spec(os.path.join(SCENE_DIR, 'three_primitives.txt'))


@pytest.fixture
def make_args(tmp_path):
    ''' Parsed pipeline arguments writing under tmp_path; extra flags override defaults. '''
    def build(*flags, command='eval'):
        return parse_args([command, '--out', str(tmp_path / 'run')] + [str(f) for f in flags])
    return build


@pytest.fixture
def rng():
    return np.random.default_rng(0)
