import math

import numpy as np
import pytest

from conftest import box_scene
from geometry.cloud import coverage
from geometry.transforms import RigidTransform
from recon.mesh_sampling import mesh_to_cloud
from sim.primitives import make_box, make_cylinder, make_primitive, make_sphere
from sim.render import (fully_visible_cloud, hemisphere_trajectory, render_frame, render_sequence,
                        ring_trajectory)
from sim.scene import (SceneModel, SceneObject, gt_surface_samples, load_scene_spec, perturb_objects,
                       save_scene_spec)
from utils.errors import InvalidInputError

TOP_VIEW = RigidTransform.look_at([0., 0., 1.], [0., 0., 0.], fallback_up=(1., 0., 0.))


@pytest.mark.parametrize('mesh', [make_box((0.1, 0.2, 0.3)), make_cylinder(0.05, 0.1), make_sphere(0.04)])
def test_primitives_are_centered_and_wound_outward(mesh):
    centroids = mesh.corners().mean(axis=1)
    outward = np.einsum('ij,ij->i', mesh.face_normals(), centroids - mesh.vertices.mean(axis=0))
    assert np.all(outward > 0)
    assert np.allclose(mesh.vertices.min(axis=0), -mesh.vertices.max(axis=0), atol=1e-9)


def test_box_extents():
    mesh = make_box((0.1, 0.2, 0.3))
    assert np.allclose(mesh.vertices.max(axis=0), [0.05, 0.1, 0.15])
    assert math.isclose(mesh.face_areas().sum(), 2 * (0.02 + 0.03 + 0.06), rel_tol=1e-9)


@pytest.mark.parametrize('kind, params', [('box', {'size': (0., 1., 1.)}), ('cylinder', {'radius': -1., 'height': 1.}),
                                          ('cone', {})])
def test_bad_primitives_are_rejected(kind, params):
    with pytest.raises(InvalidInputError):
        make_primitive(kind, **params)


def test_mesh_samples_follow_area_and_carry_face_normals():
    mesh = make_box((0.1, 0.1, 0.1))
    cloud = mesh_to_cloud(mesh, 1e5, seed=0, label=3)
    assert abs(len(cloud) - 0.06 * 1e5) <= len(mesh)
    assert np.all(np.abs(cloud.positions) <= 0.05 + 1e-12)
    assert np.allclose(np.abs(cloud.normals).max(axis=1), 1.)
    assert set(cloud.labels.tolist()) == {3}
    again = mesh_to_cloud(mesh, 1e5, seed=0, label=3)
    assert np.array_equal(cloud.positions, again.positions)


def test_scene_ids_must_be_contiguous():
    box = make_box((0.1, 0.1, 0.1))
    with pytest.raises(InvalidInputError):
        SceneModel((SceneObject(2, box, RigidTransform.identity()),))


def test_scene_spec_round_trip(tmp_path, three_primitives):
    save_scene_spec(three_primitives, tmp_path / 'scene.txt')
    back = load_scene_spec(tmp_path / 'scene.txt')
    assert back.num_objects == 3 and back.ground_plane
    for a, b in zip(three_primitives.objects, back.objects):
        assert a.kind == b.kind
        assert b.pose.allclose(a.pose, atol=2e-6)
        assert np.allclose(a.mesh.vertices, b.mesh.vertices, atol=2e-6)


def test_scene_spec_errors(tmp_path):
    (tmp_path / 'bad.txt').write_text('[object]\ntype = torus\n')
    with pytest.raises(InvalidInputError):
        load_scene_spec(tmp_path / 'bad.txt')
    (tmp_path / 'bad2.txt').write_text('gravity = 9.81\n')
    with pytest.raises(InvalidInputError):
        load_scene_spec(tmp_path / 'bad2.txt')


def test_top_view_depth_and_mask(intr):
    # off-center so the principal ray does not graze the diagonal of the top face
    scene = box_scene((0.1, 0.1, 0.1), yaw=0., xy=(0.01, 0.013))
    frame = render_frame(scene, TOP_VIEW, intr)
    assert frame.depth.values[120, 160] == pytest.approx(0.9, abs=1e-5)
    assert frame.mask.labels[120, 160] == 1
    # corner ray lands on the ground plane
    assert frame.depth.values[0, 0] == pytest.approx(1.0, abs=1e-5)
    assert frame.mask.labels[0, 0] == 0


def test_rays_missing_everything_render_zero(intr):
    scene = box_scene((0.1, 0.1, 0.1), yaw=0., ground_plane=False)
    frame = render_frame(scene, TOP_VIEW, intr)
    assert frame.depth.values[0, 0] == 0.
    assert frame.mask.labels[0, 0] == 0
    empty = render_frame(SceneModel((), ground_plane=False), TOP_VIEW, intr)
    assert not empty.depth.values.any()


def test_rendered_points_lie_on_the_object(intr, single_box):
    frame = render_frame(single_box, RigidTransform.look_at([0.4, 0.2, 0.3], [0., 0., 0.03]), intr)
    world = frame.cam_pose.apply(frame.object_cloud(1).positions)
    local = single_box.object(1).pose.inverse().apply(world)
    assert len(local) > 500
    assert np.all(np.abs(local) <= np.array([0.06, 0.04, 0.025]) + 1e-4)


def test_noise_is_reproducible_per_frame(intr, single_box):
    a = render_frame(single_box, TOP_VIEW, intr, index=4, noise_sigma=0.001, seed=1)
    b = render_frame(single_box, TOP_VIEW, intr, index=4, noise_sigma=0.001, seed=1)
    c = render_frame(single_box, TOP_VIEW, intr, index=5, noise_sigma=0.001, seed=1)
    assert np.array_equal(a.depth.values, b.depth.values)
    assert not np.array_equal(a.depth.values, c.depth.values)


def test_perturb_moves_only_the_named_object(three_primitives):
    moved = perturb_objects(three_primitives, {2: RigidTransform.translate(0.05, 0., 0.)})
    before = gt_surface_samples(three_primitives, 2e4)
    after = gt_surface_samples(moved, 2e4)
    shift = after.positions - before.positions
    assert np.allclose(shift[before.labels == 2], [0.05, 0., 0.], atol=1e-12)
    assert np.allclose(shift[before.labels != 2], 0.)
    with pytest.raises(InvalidInputError):
        perturb_objects(three_primitives, {9: RigidTransform.identity()})


def test_gt_samples_can_skip_the_resting_face(single_box):
    full = gt_surface_samples(single_box, 2e4)
    visible = gt_surface_samples(single_box, 2e4, exclude_downward=True)
    assert len(visible) < len(full)
    assert not np.any(visible.normals[:, 2] < -0.99)


def test_hemisphere_trajectory_looks_at_center():
    center = np.array([0., 0., 0.03])
    poses = hemisphere_trajectory(center, 0.5, 16, 3)
    assert len(poses) == 48
    for T in poses:
        assert np.linalg.norm(T.translation - center) == pytest.approx(0.5)
        assert np.allclose(T.rotation[:, 2], (center - T.translation) / 0.5, atol=1e-9)
        assert T.translation[2] > center[2]


def test_single_ring_is_the_pole():
    poses = hemisphere_trajectory([0., 0., 0.], 0.4, 4, 1)
    assert all(np.allclose(T.translation, [0., 0., 0.4]) for T in poses)


def test_quarter_sphere_azimuths():
    poses = hemisphere_trajectory([0., 0., 0.], 0.5, 3, 2, azimuth_range_deg=90.)
    az = {round(math.degrees(math.atan2(T.translation[1], T.translation[0])), 6) for T in poses}
    assert az == {0., 45., 90.}


def test_ring_trajectory_elevation():
    poses = ring_trajectory([0., 0., 0.], 0.5, 8, 30.)
    assert len(poses) == 8
    assert all(T.translation[2] == pytest.approx(0.25) for T in poses)


def test_fully_visible_cloud_covers_the_visible_surface(intr, single_box):
    views = hemisphere_trajectory([0., 0., 0.025], 0.5, 16, 3)
    cloud = fully_visible_cloud(single_box, views, intr, dedup_voxel=0.003)
    assert cloud.has_normals and set(cloud.labels.tolist()) == {1}
    gt = gt_surface_samples(single_box, 2e4, exclude_downward=True)
    assert coverage(cloud, gt, 0.006) > 0.9


def test_render_sequence_indices(intr, single_box):
    frames = render_sequence(single_box, [TOP_VIEW, TOP_VIEW], intr, start_index=3)
    assert [f.index for f in frames] == [3, 4]
