import numpy as np
import pytest

from proxycoll.collision import CollisionPoint, build_models, detect_batch, pose_pair
from proxycoll.guidance import (aggregate_directions, chain_to_joints, collision_loss,
                                frozen_objective, group_direction, guidance_vector)
from proxycoll.primitives import CUBOID, CYLINDER
from proxycoll.skeleton import PosedPrimitive
from proxycoll.synthetic import multi_region_scene

from conftest import chain_skeleton, cylinder_through_box, frozen_fd_error, random_rotation, small_scene


def point(p):
    return CollisionPoint(tuple(p), 0, 0, 0, 1, 0.01)


def test_cylinder_guidance_points_through_the_axis():
    host = PosedPrimitive(0, CYLINDER, np.zeros(3), np.eye(3), (0.1, 1.0))
    g = guidance_vector(point((0.1, 0, 0.5)), host, (0.1, 0, 0.5))
    assert np.allclose(g.q_world, (-0.1, 0, 0.5))
    assert np.allclose(g.d, (-1, 0, 0))


def test_cuboid_guidance_points_through_the_center():
    host = PosedPrimitive(0, CUBOID, np.zeros(3), np.eye(3), (0.1, 0.2, 0.3))
    g = guidance_vector(point((0.1, 0, 0)), host, (0.1, 0, 0))
    assert np.allclose(g.d, (-1, 0, 0))
    assert abs(np.linalg.norm(g.d) - 1.0) < 1e-12


def test_guidance_rotates_with_the_host(rng):
    rot, t = random_rotation(rng), rng.normal(size=3)
    local = np.array([0.1, 0.0, 0.3])
    host = PosedPrimitive(0, CYLINDER, t, rot, (0.1, 1.0))
    g = guidance_vector(point(host.to_world(local)), host, local)
    assert np.max(np.abs(g.d - rot @ [-1.0, 0.0, 0.0])) < 1e-9


def test_axis_sample_has_no_guidance():
    host = PosedPrimitive(0, CYLINDER, np.zeros(3), np.eye(3), (0.1, 1.0))
    with pytest.raises(ValueError, match="undefined"):
        guidance_vector(point((0, 0, 1.0)), host, (0, 0, 1.0))


def test_aggregate_count_weighted_mean():
    d = aggregate_directions([(3, (1, 0, 0)), (1, (0, 1, 0))])
    assert np.allclose(d, (0.75, 0.25, 0))


def test_aggregate_single_group_is_identity():
    assert np.allclose(aggregate_directions([(5, (0, 0, 1))]), (0, 0, 1))


def test_aggregate_opposing_groups_cancel():
    assert np.allclose(aggregate_directions([(2, (1, 0, 0)), (2, (-1, 0, 0))]), 0.0)
    with pytest.raises(ValueError):
        aggregate_directions([])


def test_group_direction_renormalizes():
    d = group_direction([(1, 0, 0), (0, 1, 0)])
    assert np.allclose(d, np.array([1, 1, 0]) / np.sqrt(2))


def test_empty_report_has_zero_loss():
    models, pos = cylinder_through_box()
    pos = pos.copy()
    pos[0, 1] += 10
    posed = pose_pair(models, pos)
    loss = collision_loss(detect_batch(*posed), posed)
    assert loss.value == 0.0 and loss.grad_samples.shape == (0, 3)
    assert np.all(chain_to_joints(loss, detect_batch(*posed), models, pos) == 0)


def test_per_point_value_is_the_point_count():
    models, pos = cylinder_through_box()
    posed = pose_pair(models, pos)
    report = detect_batch(*posed)
    loss = collision_loss(report, posed, "per_point")
    assert loss.value == pytest.approx(loss.included.sum(), abs=1e-12)
    assert np.allclose(np.linalg.norm(loss.directions[loss.included], axis=1), 1.0)
    assert np.allclose(loss.grad_samples, -2.0 * loss.directions)


def test_frozen_objective_at_the_points_is_the_loss():
    models, pos = cylinder_through_box()
    posed = pose_pair(models, pos)
    report = detect_batch(*posed)
    loss = collision_loss(report, posed)
    assert frozen_objective(loss.targets, report.p_world) == pytest.approx(loss.value)


def test_rigid_translation_balances_forces():
    _, _, models, pos = small_scene(5)
    posed = pose_pair(models, pos)
    report = detect_batch(*posed)
    loss = collision_loss(report, posed)
    g = chain_to_joints(loss, report, models, pos)
    for person in (0, 1):
        sel = report.host_person == person
        assert np.allclose(g[0, person].sum(axis=0), loss.grad_samples[sel].sum(axis=0), atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_joint_gradient_matches_finite_differences(seed):
    _, _, models, pos = small_scene(seed)
    err, n = frozen_fd_error(models, pos)
    assert n > 0 and err < 1e-4


def test_single_segment_finite_differences():
    from proxycoll.primitives import ProxyParams, SegmentProxy
    sk = chain_skeleton([CYLINDER])
    params = ProxyParams([SegmentProxy(CYLINDER, r=0.06)], {CYLINDER: 30})
    a = np.array([[0.0, 0.0, 0.0], [0.0, 0.05, 0.5]])
    b = np.array([[-0.2, 0.03, 0.25], [0.2, -0.02, 0.27]])
    pos = np.stack([a, b])[None]
    models = build_models(sk, (params, params), pos[0])
    err, n = frozen_fd_error(models, pos)
    assert n > 0 and err < 1e-4


def test_multi_region_uses_the_aggregated_direction():
    scene = multi_region_scene(frames=1)
    models = build_models(scene.skeleton, scene.params, scene.motion.positions[0])
    posed = pose_pair(models, scene.motion.positions)
    report = detect_batch(*posed)
    loss = collision_loss(report, posed, "aggregated")
    assert loss.aggregated_keys
    f, person, seg = loss.aggregated_keys[0]
    sel = ((report.frame == f) & (report.host_person == person) & (report.host_segment == seg)
           & loss.included)
    conts = report.container_segment[sel]
    groups = [(int(np.sum(conts == c)), group_direction(loss.directions[sel][conts == c]))
              for c in np.unique(conts)]
    expected = sum(n * d for n, d in groups) / sum(n for n, _ in groups)
    assert np.allclose(loss.effective[sel], expected, atol=1e-15)
    per_point = collision_loss(report, posed, "per_point")
    assert not np.allclose(per_point.effective[sel], expected)


def test_container_antipodes_are_an_option():
    models, pos = cylinder_through_box()
    posed = pose_pair(models, pos)
    report = detect_batch(*posed)
    host = collision_loss(report, posed, antipodal_on="host")
    cont = collision_loss(report, posed, antipodal_on="container")
    assert not np.allclose(host.directions, cont.directions)
    with pytest.raises(ValueError):
        collision_loss(report, posed, antipodal_on="nearest")
    with pytest.raises(ValueError):
        collision_loss(report, posed, mode="sum")


def test_gradient_ignores_the_stored_targets():
    _, _, models, pos = small_scene(2)
    posed = pose_pair(models, pos)
    report = detect_batch(*posed)
    loss = collision_loss(report, posed)
    g = chain_to_joints(loss, report, models, pos)
    loss.targets_q[:] += 0.3
    assert np.array_equal(chain_to_joints(loss, report, models, pos), g)
