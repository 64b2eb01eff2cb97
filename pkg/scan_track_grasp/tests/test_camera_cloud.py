import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from geometry.camera import CameraIntrinsics, DepthImage, InstanceMask, backproject
from geometry.cloud import (PointCloud, chamfer_distance, concatenate, coverage, crop_cloud,
                            estimate_normals, transform_cloud, voxel_downsample, voxel_keys)
from geometry.transforms import RigidTransform
from utils.errors import InvalidInputError


def depth_with(intr, pixels):
    d = np.zeros((intr.height, intr.width), dtype=np.float32)
    for (u, v), z in pixels.items():
        d[v, u] = z
    return DepthImage(d)


def test_principal_pixel_backprojects_onto_the_optical_axis(intr):
    cloud = backproject(depth_with(intr, {(160, 120): 1.5}), intr)
    assert len(cloud) == 1
    assert np.allclose(cloud.positions[0], [0., 0., 1.5])


def test_empty_depth_gives_empty_cloud(intr):
    assert len(backproject(depth_with(intr, {}), intr)) == 0


def test_pinhole_formula_one_focal_length_off_axis():
    intr = CameraIntrinsics(100., 100., 160., 120., 320, 240)
    cloud = backproject(depth_with(intr, {(260, 120): 2.0}), intr)
    assert np.allclose(cloud.positions[0], [2.0, 0., 2.0])


def test_mask_filters_pixels_and_carries_labels(intr):
    depth = depth_with(intr, {(10, 10): 1., (20, 20): 1., (30, 30): 1.})
    labels = np.zeros((intr.height, intr.width), dtype=np.int32)
    labels[10, 10], labels[20, 20] = 1, 2
    mask = InstanceMask(labels, 2)
    cloud = backproject(depth, intr, mask)
    assert sorted(cloud.labels.tolist()) == [1, 2]
    only = backproject(depth, intr, mask, object_id=2)
    assert len(only) == 1 and only.labels[0] == 2


def test_dimension_mismatch_is_rejected(intr):
    with pytest.raises(InvalidInputError):
        backproject(DepthImage(np.ones((10, 10))), intr)
    with pytest.raises(InvalidInputError):
        backproject(depth_with(intr, {}), intr, InstanceMask(np.zeros((10, 10))))


@pytest.mark.parametrize('values', [np.full((4, 4), -1.), np.full((4, 4), np.inf)])
def test_depth_values_must_be_finite_and_non_negative(values):
    with pytest.raises(InvalidInputError):
        DepthImage(values)


def test_mask_labels_bounded_by_object_count():
    with pytest.raises(InvalidInputError):
        InstanceMask(np.full((4, 4), 3), num_objects=2)


@pytest.mark.parametrize('cx, cy', [(0., 120.), (320., 120.), (160., 240.)])
def test_principal_point_must_lie_inside_image(cx, cy):
    with pytest.raises(InvalidInputError):
        CameraIntrinsics(277., 277., cx, cy, 320, 240)


def test_normals_must_be_unit():
    with pytest.raises(InvalidInputError):
        PointCloud(np.zeros((2, 3)), np.array([[0., 0., 2.], [0., 0., 1.]]))


def test_plane_normals_face_the_camera():
    u, v = np.meshgrid(np.linspace(-0.1, 0.1, 15), np.linspace(-0.1, 0.1, 15))
    cloud = PointCloud(np.stack([u.ravel(), v.ravel(), np.ones(u.size)], axis=1))
    normals = estimate_normals(cloud, k=10).normals
    assert np.allclose(normals, [0., 0., -1.], atol=1e-6)


def test_sphere_normals_follow_the_radius():
    # Fibonacci lattice on a 10 cm sphere two metres in front of the camera
    n = 4000
    i = np.arange(n) + 0.5
    z = 1. - 2. * i / n
    phi = np.pi * (1. + 5 ** 0.5) * i
    r = np.sqrt(1. - z ** 2)
    radial = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    center = np.array([0., 0., 2.])
    points = center + 0.1 * radial
    normals = estimate_normals(PointCloud(points), k=10).normals
    cos = np.einsum('ij,ij->i', normals, radial)
    assert np.all(np.abs(cos) >= np.cos(np.radians(5.)))
    # away from the silhouette the sign is set by the camera at the origin
    facing = -np.einsum('ij,ij->i', radial, points / np.linalg.norm(points, axis=1, keepdims=True))
    clear = np.abs(facing) > 0.2
    assert np.all(np.sign(cos[clear]) == np.sign(facing[clear]))


def test_collinear_neighbourhoods_take_the_smallest_valid_normal():
    across = PointCloud([[-0.01, 0., 2.], [0., 0., 2.], [0.01, 0., 2.]])
    assert np.allclose(estimate_normals(across, k=3).normals, [0., 0., -1.], atol=1e-9)
    along = PointCloud([[0., 0., 1.99], [0., 0., 2.], [0., 0., 2.01]])
    assert np.allclose(estimate_normals(along, k=3).normals, [0., 1., 0.], atol=1e-9)


def test_normal_estimation_needs_k_points():
    with pytest.raises(InvalidInputError):
        estimate_normals(PointCloud(np.zeros((5, 3))), k=10)


def test_transform_rotates_normals_and_keeps_labels():
    cloud = PointCloud([[1., 0., 0.]], [[1., 0., 0.]], [7])
    T = RigidTransform.from_rotvec([0., 0., np.pi / 2.], [0., 0., 1.])
    moved = transform_cloud(cloud, T)
    assert np.allclose(moved.positions, [[0., 1., 1.]])
    assert np.allclose(moved.normals, [[0., 1., 0.]])
    assert moved.labels.tolist() == [7]


@given(arrays(np.float64, st.tuples(st.integers(1, 60), st.just(3)), elements=st.floats(-0.5, 0.5)),
       st.sampled_from([0.01, 0.05, 0.2]))
def test_voxel_downsample_keeps_one_point_per_occupied_voxel(points, voxel):
    out = voxel_downsample(PointCloud(points), voxel)
    assert len(out) == len(np.unique(voxel_keys(points, voxel), axis=0))
    assert np.all(out.positions >= points.min(axis=0) - 1e-12)
    assert np.all(out.positions <= points.max(axis=0) + 1e-12)


def test_voxel_downsample_labels_take_the_majority():
    cloud = PointCloud([[0.001, 0., 0.], [0.002, 0., 0.], [0.003, 0., 0.]], labels=[2, 1, 2])
    out = voxel_downsample(cloud, 0.01)
    assert len(out) == 1 and out.labels[0] == 2
    assert np.allclose(out.positions[0], [0.002, 0., 0.])


def test_concatenate_drops_normals_unless_all_have_them():
    a = PointCloud([[0., 0., 0.]], [[0., 0., 1.]])
    b = PointCloud([[1., 0., 0.]])
    assert concatenate([a, b]).normals is None
    assert len(concatenate([a, a]).normals) == 2


def test_crop_coverage_and_chamfer():
    pts = np.random.default_rng(3).uniform(-1., 1., size=(500, 3))
    cloud = PointCloud(pts)
    near = crop_cloud(cloud, [0., 0., 0.], 0.5)
    assert np.all(np.linalg.norm(near.positions, axis=1) <= 0.5)
    assert coverage(cloud, cloud, 1e-9) == 1.
    assert coverage(PointCloud.empty(), cloud, 0.1) == 0.
    assert chamfer_distance(pts, pts) == 0.
    shifted = pts + [0.01, 0., 0.]
    assert chamfer_distance(pts, shifted) <= 0.01 + 1e-12
