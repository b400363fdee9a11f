"""Randomized invariants checked with hypothesis."""
import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from proxycoll.bench import bench_scenes
from proxycoll.collision import build_models, detect_batch, pose_pair
from proxycoll.guidance import chain_to_joints, collision_loss
from proxycoll.metrics import coll_metrics
from proxycoll.primitives import (CUBOID, CYLINDER, Cuboid, Cylinder, antipodal, antipodal_local,
                                  contains, inside_local, sample_surface, surface_distance)
from proxycoll.resolve import ResolveConfig, resolve_sequence
from proxycoll.skeleton import MotionSequence, default_proxy_params, default_skeleton

from conftest import random_rotation, small_scene

seeds = st.integers(0, 10_000)
lengths = st.floats(0.02, 0.5)


SKELETON = default_skeleton()
PARAMS = default_proxy_params(SKELETON)


def body_scene(seed):
    """A jittered two-person frame of the 22-joint skeleton with contacts.

    Rigid equivariance needs a skeleton with a body frame; bare chains fall
    back to world axes for their lateral directions.
    """
    scenes = bench_scenes(8, seed)
    for pos in scenes:
        pos = pos[None]
        models = build_models(SKELETON, (PARAMS, PARAMS), pos[0], {CYLINDER: 10, CUBOID: 16})
        if len(detect_batch(*pose_pair(models, pos))):
            return models, pos
    return body_scene(seed + 10_001)


def rigid(rng):
    return random_rotation(rng), rng.uniform(-2.0, 2.0, 3)


def dims_for(kind, a, b, c):
    return (a, 4 * b) if kind == CYLINDER else (a, b, c)


@given(kind=st.sampled_from([CYLINDER, CUBOID]), a=lengths, b=lengths, c=lengths,
       n=st.integers(1, 80), seed=seeds)
def test_samples_lie_on_the_surface(kind, a, b, c, n, seed):
    dims = dims_for(kind, a, b, c)
    s = sample_surface(kind, dims, n, seed=seed)
    assert len(s.local_points) == n
    assert np.max(np.abs(surface_distance(kind, dims, s.local_points))) < 1e-9


@given(kind=st.sampled_from([CYLINDER, CUBOID]), a=lengths, b=lengths, c=lengths,
       n=st.integers(1, 80), seed=seeds)
def test_antipode_is_an_involution_onto_the_surface(kind, a, b, c, n, seed):
    dims = dims_for(kind, a, b, c)
    p = sample_surface(kind, dims, n, seed=seed).local_points
    _, ok = antipodal_local(kind, p)
    p = p[ok]
    q = antipodal(kind, dims, p)
    assert np.max(np.abs(surface_distance(kind, dims, q))) < 1e-9
    assert np.allclose(antipodal(kind, dims, q), p, atol=1e-15)


@given(kind=st.sampled_from([CYLINDER, CUBOID]), a=lengths, b=lengths, c=lengths, seed=seeds)
def test_world_containment_matches_the_local_frame(kind, a, b, c, seed):
    rng = np.random.default_rng(seed)
    rot, t = rigid(rng)
    dims = dims_for(kind, a, b, c)
    local = rng.uniform(-1.2, 1.2, (400, 3)) * (max(dims) + 0.01)
    world = local @ rot.T + t
    if kind == CYLINDER:
        shape = Cylinder(t, rot[:, 2], dims[1], dims[0])
    else:
        shape = Cuboid(t, rot, dims)
    # keep away from the faces where float rounding may legitimately decide
    clear = np.abs(surface_distance(kind, dims, local)) > 1e-9
    assert np.array_equal(contains(shape, world)[clear], inside_local(kind, dims, local)[clear])


@given(seed=seeds)
def test_broad_phase_loses_nothing(seed):
    _, _, models, pos = small_scene(seed, frames=2)
    posed = pose_pair(models, pos)
    assert detect_batch(*posed).keys() == detect_batch(*posed, broad_phase=False).keys()


@given(seed=seeds)
def test_detection_is_rigid_equivariant(seed):
    models, pos = body_scene(seed)
    rot, t = rigid(np.random.default_rng(seed + 1))
    moved = pos @ rot.T + t
    rep = detect_batch(*pose_pair(models, pos))
    rep2 = detect_batch(*pose_pair(models, moved))
    assert rep.keys() == rep2.keys()
    assert np.allclose(rep2.depth, rep.depth, atol=1e-9)
    assert np.allclose(rep2.p_world, rep.p_world @ rot.T + t, atol=1e-9)


@given(seed=seeds, mode=st.sampled_from(["per_point", "aggregated"]))
def test_guidance_and_gradient_are_rigid_equivariant(seed, mode):
    models, pos = body_scene(seed)
    rot, t = rigid(np.random.default_rng(seed + 2))
    moved = pos @ rot.T + t
    out = []
    for p in (pos, moved):
        posed = pose_pair(models, p)
        rep = detect_batch(*posed)
        loss = collision_loss(rep, posed, mode)
        out.append((loss, chain_to_joints(loss, rep, models, p)))
    (l0, g0), (l1, g1) = out
    assert abs(l1.value - l0.value) < 1e-9
    assert np.allclose(l1.effective, l0.effective @ rot.T, atol=1e-9)
    assert np.allclose(g1, g0 @ rot.T, atol=1e-8)


@given(seed=seeds, mode=st.sampled_from(["per_point", "aggregated", "auto"]))
def test_loss_invariants(seed, mode):
    _, _, models, pos = small_scene(seed)
    posed = pose_pair(models, pos)
    rep = detect_batch(*posed)
    loss = collision_loss(rep, posed, mode)
    inc = loss.included
    assert np.allclose(np.linalg.norm(loss.directions[inc], axis=1), 1.0, atol=1e-9)
    assert abs(loss.value - np.sum(loss.effective[inc] ** 2)) < 1e-9
    assert np.allclose(loss.grad_samples[inc], -2.0 * loss.effective[inc])
    assert np.all(loss.grad_samples[~inc] == 0)
    groups = rep.per_segment_groups
    assert sorted(i for g in groups.values() for idx in g.values() for i in idx) == list(range(len(rep)))


@given(seed=seeds, shift=st.floats(-0.5, 0.5))
def test_gradient_ignores_perturbed_targets(seed, shift):
    _, _, models, pos = small_scene(seed)
    posed = pose_pair(models, pos)
    rep = detect_batch(*posed)
    loss = collision_loss(rep, posed)
    g = chain_to_joints(loss, rep, models, pos)
    loss.targets_q[:] += shift
    assert np.array_equal(chain_to_joints(loss, rep, models, pos), g)


@given(seed=seeds, s=st.floats(0.25, 4.0))
def test_metrics_scale_with_the_scene(seed, s):
    sk, params, _, pos = small_scene(seed, frames=3)
    base = coll_metrics(MotionSequence(pos), params, sk)
    scaled = coll_metrics(MotionSequence(pos * s), tuple(p.scaled(s) for p in params), sk)
    assert scaled.coll_ro == base.coll_ro
    assert abs(scaled.coll_dis - s * base.coll_dis) < 1e-9 * max(1.0, s)
    assert 0.0 <= base.coll_ro <= 1.0
    assert base.coll_dis == np.sum(base.per_frame_depth)


@given(seed=seeds)
def test_clean_input_is_a_fixed_point(seed):
    sk, params, _, pos = small_scene(seed, frames=2)
    pos = pos.copy()
    pos[:, 1] += [5.0, 0.0, 0.0]
    out, report = resolve_sequence(MotionSequence(pos), params, sk, ResolveConfig(max_iters=20))
    assert report.status == "clean"
    assert np.array_equal(out.positions, pos)
