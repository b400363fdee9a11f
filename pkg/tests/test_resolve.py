import numpy as np
import pytest

from proxycoll.metrics import coll_metrics
from proxycoll.resolve import ResolveConfig, bone_drift_pct, bone_lengths, resolve_sequence
from proxycoll.skeleton import MotionSequence, default_skeleton
from proxycoll.synthetic import parallel_arms, place, relaxed_pose


@pytest.fixture(scope="module")
def arms():
    scene = parallel_arms()
    out, report = resolve_sequence(scene.motion, scene.params, scene.skeleton)
    return scene, out, report


def test_clean_input_is_a_fixed_point():
    scene = parallel_arms(frames=4)
    pos = scene.motion.positions.copy()
    pos[:, 1] += [3.0, 0.0, 0.0]
    out, report = resolve_sequence(MotionSequence(pos), scene.params, scene.skeleton)
    assert np.max(np.abs(out.positions - pos)) <= 1e-9
    assert report.status == "clean" and report.before.coll_ro == 0.0


def test_parallel_arms_penetration_drops(arms):
    _, _, report = arms
    assert report.before.coll_dis > 0
    assert report.coll_dis_reduction >= 0.5
    assert report.after.coll_ro < report.before.coll_ro


def test_parallel_arms_bones_hold(arms):
    scene, out, report = arms
    assert report.max_bone_drift_pct < 1.0
    assert bone_drift_pct(scene.skeleton, scene.motion.positions, out.positions) == pytest.approx(
        report.max_bone_drift_pct)


def test_report_metrics_are_recomputed(arms):
    scene, out, report = arms
    after = coll_metrics(out, scene.params, scene.skeleton)
    assert report.after.coll_dis == pytest.approx(after.coll_dis)
    assert report.after.coll_ro == after.coll_ro
    disp = np.linalg.norm(out.positions - scene.motion.positions, axis=-1).max()
    assert report.max_joint_displacement == pytest.approx(disp)


def test_accepted_steps_never_raise_their_frozen_objective(arms):
    _, _, report = arms
    curves = report.loss_curves
    accepted = np.array(curves["accepted"])
    total = np.array(curves["total"][:len(accepted)])
    assert np.all(accepted <= total + 1e-12 * np.maximum(1.0, np.abs(total)))


def test_every_rise_of_the_total_is_logged(arms):
    _, _, report = arms
    total = np.array(report.loss_curves["total"])
    rises = {int(i) + 2 for i in np.nonzero(np.diff(total) > 1e-10)[0]}
    assert rises == {e["iteration"] for e in report.transient_increases}


def test_resolve_is_deterministic(arms):
    scene, out, _ = arms
    again, _ = resolve_sequence(scene.motion, scene.params, scene.skeleton)
    assert np.array_equal(out.positions, again.positions)


def test_mirrored_scene_gives_mirrored_result(arms):
    scene, out, _ = arms
    mirror = np.diag([-1.0, 1.0, 1.0])
    flipped, _ = resolve_sequence(MotionSequence(scene.motion.positions @ mirror), scene.params,
                                  scene.skeleton)
    assert np.max(np.abs(flipped.positions - out.positions @ mirror)) < 1e-8


def test_zero_iterations_returns_input():
    scene = parallel_arms(frames=3)
    out, report = resolve_sequence(scene.motion, scene.params, scene.skeleton,
                                   ResolveConfig(max_iters=0))
    assert np.array_equal(out.positions, scene.motion.positions)
    assert report.status == "max_iters"


def test_presets():
    assert ResolveConfig.from_preset("adaption").lambda_coll == 10.0
    assert ResolveConfig.from_preset("scratch").lambda_coll == 0.1
    assert ResolveConfig.from_preset("scratch", max_iters=3).max_iters == 3
    with pytest.raises(ValueError, match="preset"):
        ResolveConfig.from_preset("finetune")


@pytest.mark.parametrize("kw", [{"lambda_bone": -1.0}, {"learning_rate": 0.0}, {"mode": "sum"},
                                {"antipodal_on": "nearest"}, {"rigidity": -1.0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ResolveConfig(**kw)


def test_config_dict_round_trip():
    cfg = ResolveConfig(lambda_coll=3.0, max_iters=7)
    assert ResolveConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="lambda_colll"):
        ResolveConfig.from_dict({"lambda_colll": 1.0})


def test_bone_lengths_of_a_placed_pose():
    sk = default_skeleton()
    pose = relaxed_pose()
    moved = place(pose, 37.0, (1.0, -2.0, 0.5))
    assert np.allclose(bone_lengths(sk, pose), bone_lengths(sk, moved))
    assert bone_drift_pct(sk, pose, moved) < 1e-12
