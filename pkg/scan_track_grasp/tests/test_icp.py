import math

import numpy as np
import pytest

from geometry.cloud import PointCloud, concatenate, transform_cloud
from geometry.transforms import RigidTransform, pose_error
from recon.mesh_sampling import mesh_to_cloud
from sim.primitives import make_box
from tracking.icp import IcpParams, icp_register
from utils.errors import InvalidInputError, TrackingLostError

WIDE = IcpParams(d_corr=0.1, max_iter=60, eps=1e-10, f_min=0.3)


def random_perturbation(rng, max_deg=10., max_trans=0.03):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    return RigidTransform.from_rotvec(axis * math.radians(rng.uniform(0., max_deg)),
                                      direction * rng.uniform(0., max_trans))


def recovery_errors(mesh, n_trials, seed):
    rng = np.random.default_rng(seed)
    target = mesh_to_cloud(mesh, 1e5, seed=1)
    samples = mesh_to_cloud(mesh, 5e4, seed=2)
    errors = []
    for _ in range(n_trials):
        P = random_perturbation(rng)
        T, rms, fraction = icp_register(transform_cloud(samples, P), target, RigidTransform.identity(), WIDE)
        errors.append(pose_error(T, P.inverse()))
        assert fraction == 1.
    return np.array(errors)


@pytest.mark.parametrize('mesh', [make_box((0.12, 0.08, 0.05)), make_box((0.04, 0.1, 0.07))])
def test_small_perturbations_are_recovered(mesh):
    errors = recovery_errors(mesh, 5, seed=0)
    assert errors[:, 0].max() < 0.5
    assert errors[:, 1].max() < 0.002


@pytest.mark.slow
def test_hundred_random_perturbations_of_a_box():
    errors = recovery_errors(make_box((0.12, 0.08, 0.05)), 100, seed=7)
    assert errors[:, 0].max() < 0.5
    assert errors[:, 1].max() < 0.002


def test_identity_is_a_fixed_point():
    target = mesh_to_cloud(make_box((0.12, 0.08, 0.05)), 1e5, seed=1)
    T, rms, fraction = icp_register(target, target, RigidTransform.identity())
    assert T.allclose(RigidTransform.identity(), atol=1e-9)
    assert rms == pytest.approx(0., abs=1e-12)
    assert fraction == 1.


def test_distant_clouds_lose_track():
    target = mesh_to_cloud(make_box((0.12, 0.08, 0.05)), 1e5, seed=1)
    far = transform_cloud(target, RigidTransform.translate(0.5, 0., 0.))
    with pytest.raises(TrackingLostError) as info:
        icp_register(far, target, RigidTransform.identity())
    assert info.value.inlier_fraction == 0.


def test_low_overlap_is_rejected_by_f_min():
    target = mesh_to_cloud(make_box((0.12, 0.08, 0.05)), 1e5, seed=1)
    stray = PointCloud(np.random.default_rng(0).uniform(1., 2., size=(3 * len(target), 3)))
    source = concatenate([target.without_normals(), stray])
    with pytest.raises(TrackingLostError):
        icp_register(source, target, RigidTransform.identity(), IcpParams(f_min=0.5))


def test_inputs_are_validated():
    target = mesh_to_cloud(make_box((0.12, 0.08, 0.05)), 1e5, seed=1)
    with pytest.raises(InvalidInputError):
        icp_register(target.select(np.arange(5)), target, RigidTransform.identity())
    with pytest.raises(InvalidInputError):
        icp_register(target, target.without_normals(), RigidTransform.identity())
