"""Refine a two-person motion by gradient descent on joint positions.

The objective is

    L_total = lambda_coll * L_coll
              + lambda_anchor * sum |J - J0|^2
              + lambda_bone   * sum (|bone| - |bone0|)^2
              + lambda_smooth * sum |dJ_t - dJ0_t|^2

where ``L_coll`` is the frozen-target collision loss recomputed at every
iteration.  Each step is a gradient step taken in a bone-aware metric (see
``_Regularizers.precondition``), scaled per frame and person so that no
joint moves more than ``max_step``.  A step is accepted once it does not
increase the frozen objective of its iteration (same targets and collision
points, plus the regularizers) and does not push an already clean frame back
into collision; otherwise it is halved.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .collision import build_models, detect_batch, detect_positions, pose_pair
from .guidance import MODES, chain_to_joints, collision_loss
from .metrics import PlausibilityMetrics, metrics_from_reports
from .skeleton import MotionSequence, Skeleton

log = logging.getLogger(__name__)

PRESETS = {
    "adaption": {"lambda_coll": 10.0},
    "scratch": {"lambda_coll": 0.1},
}


@dataclass
class ResolveConfig:
    lambda_coll: float = 10.0
    lambda_anchor: float = 1.0
    lambda_bone: float = 100.0
    lambda_smooth: float = 30.0
    learning_rate: float = 5e-3
    max_iters: int = 500
    seed: int = 0
    mode: str = "auto"
    antipodal_on: str = "host"
    #: largest displacement of any joint in one step (m)
    max_step: float = 2e-3
    max_halvings: int = 30
    #: stiffness of bone stretching in the descent metric (0: plain gradient)
    rigidity: float = 100.0
    clean_patience: int = 5
    broad_phase: bool = True
    threads: int = 1
    sample_counts: dict | None = None

    def __post_init__(self):
        for name in ("lambda_coll", "lambda_anchor", "lambda_bone", "lambda_smooth"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.rigidity < 0:
            raise ValueError("rigidity must be >= 0")
        if self.max_iters < 0 or self.max_step <= 0 or self.clean_patience < 1:
            raise ValueError("max_iters, max_step and clean_patience must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if self.antipodal_on not in ("host", "container"):
            raise ValueError(f"antipodal_on must be 'host' or 'container', got {self.antipodal_on!r}")

    @classmethod
    def from_preset(cls, name="adaption", **overrides):
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        for key in doc:
            if key not in known:
                raise ValueError(f"unknown resolve config key {key!r}")
        return cls(**doc)

    def to_dict(self):
        return asdict(self)


@dataclass
class ResolveReport:
    iterations: int
    status: str                   # "clean", "max_iters", "stalled" or "non_finite"
    loss_curves: dict
    before: PlausibilityMetrics
    after: PlausibilityMetrics
    max_bone_drift_pct: float
    max_joint_displacement: float
    transient_increases: list = field(default_factory=list)
    diagnostic: str = ""
    config: dict = field(default_factory=dict)

    @property
    def coll_dis_reduction(self):
        if self.before.coll_dis == 0:
            return 0.0
        return 1.0 - self.after.coll_dis / self.before.coll_dis

    def to_dict(self):
        return {
            "schema": "proxycoll/1", "iterations": self.iterations, "status": self.status,
            "diagnostic": self.diagnostic,
            "before": self.before.to_dict(), "after": self.after.to_dict(),
            "coll_dis_reduction": self.coll_dis_reduction,
            "max_bone_drift_pct": self.max_bone_drift_pct,
            "max_joint_displacement": self.max_joint_displacement,
            "transient_increases": self.transient_increases,
            "loss_curves": self.loss_curves, "config": self.config,
        }


def bone_lengths(skeleton: Skeleton, positions):
    bones = skeleton.bones()
    d = positions[..., bones[:, 1], :] - positions[..., bones[:, 0], :]
    return np.linalg.norm(d, axis=-1)


def bone_drift_pct(skeleton: Skeleton, before, after):
    l0 = bone_lengths(skeleton, before)
    l1 = bone_lengths(skeleton, after)
    ok = l0 > 0
    if not ok.any():
        return 0.0
    return float(100.0 * np.max(np.abs(l1[ok] - l0[ok]) / l0[ok]))


class _Regularizers:
    """Anchor, bone-length and velocity terms with analytic gradients."""

    def __init__(self, skeleton, j0, cfg):
        self.j0 = j0
        self.bones = skeleton.bones()
        self.l0 = bone_lengths(skeleton, j0)
        self.v0 = np.diff(j0, axis=0)
        self.cfg = cfg

    def precondition(self, j, v):
        """Solve ``(I + k L) x = lr v`` per frame and person.

        ``L`` is the bone graph Laplacian restricted to the current bone
        directions and ``k`` the ``rigidity`` setting.  Steps that stretch
        bones are shrunk by about ``1 / (1 + 2 k)`` while rigid motions of
        limbs keep the plain gradient step; ``k = 0`` is plain gradient
        descent.
        """
        cfg = self.cfg
        if cfg.rigidity == 0:
            return cfg.learning_rate * v
        F, P, N, _ = j.shape
        e = j[..., self.bones[:, 1], :] - j[..., self.bones[:, 0], :]
        length = np.linalg.norm(e, axis=-1, keepdims=True)
        u = e / np.where(length > 0, length, 1.0)
        outer = cfg.rigidity * u[..., :, None] * u[..., None, :]   # (F, P, B, 3, 3)
        A = np.zeros((F, P, N, 3, N, 3))
        idx = np.arange(N)
        A[:, :, idx, :, idx, :] = np.eye(3)
        for k, (parent, child) in enumerate(self.bones):
            blk = outer[:, :, k]
            A[:, :, parent, :, parent, :] += blk
            A[:, :, child, :, child, :] += blk
            A[:, :, parent, :, child, :] -= blk
            A[:, :, child, :, parent, :] -= blk
        A = A.reshape(F * P, 3 * N, 3 * N)
        x = np.linalg.solve(A, cfg.learning_rate * v.reshape(F * P, 3 * N, 1))
        return x.reshape(j.shape)

    def terms(self, j):
        cfg = self.cfg
        d = j - self.j0
        anchor = float(np.sum(d * d))
        e = j[..., self.bones[:, 1], :] - j[..., self.bones[:, 0], :]
        length = np.linalg.norm(e, axis=-1)
        bone = float(np.sum((length - self.l0) ** 2))
        dv = np.diff(j, axis=0) - self.v0
        smooth = float(np.sum(dv * dv))
        return {"anchor": cfg.lambda_anchor * anchor, "bone": cfg.lambda_bone * bone,
                "smooth": cfg.lambda_smooth * smooth}

    def value(self, j):
        return sum(self.terms(j).values())

    def grad(self, j):
        cfg = self.cfg
        g = 2.0 * cfg.lambda_anchor * (j - self.j0)
        e = j[..., self.bones[:, 1], :] - j[..., self.bones[:, 0], :]
        length = np.linalg.norm(e, axis=-1)
        coef = 2.0 * cfg.lambda_bone * (length - self.l0) / np.where(length > 0, length, 1.0)
        gb = coef[..., None] * e
        n = j.shape[2]
        flat = np.zeros(j.shape[:2] + (n, 3))
        # accumulate per bone in a fixed order
        for k, (parent, child) in enumerate(self.bones):
            flat[:, :, child] += gb[:, :, k]
            flat[:, :, parent] -= gb[:, :, k]
        g += flat
        if j.shape[0] > 1:
            dv = 2.0 * cfg.lambda_smooth * (np.diff(j, axis=0) - self.v0)
            g[1:] += dv
            g[:-1] -= dv
        return g


def _sample_points(posed, report):
    pts = np.empty((len(report), 3))
    for person in (0, 1):
        sel = report.host_person == person
        pts[sel] = posed[person].samples[report.frame[sel], report.sample_flat[sel]]
    return pts


_REENTRY_TRIES = 3


def _cap_push(step, max_step):
    """Scale each (frame, person) block so no joint moves more than ``max_step``."""
    peak = np.linalg.norm(step, axis=-1).max(axis=-1, keepdims=True)[..., None]
    return step * np.minimum(1.0, max_step / np.where(peak > 0, peak, 1.0))


def resolve_sequence(motion: MotionSequence, params, skeleton: Skeleton,
                     config: ResolveConfig | None = None, models=None):
    """Gradient-descent refinement of both persons over all frames.

    Returns ``(refined MotionSequence, ResolveReport)``.  Metrics in the
    report are recomputed from the input and output sequences.
    """
    cfg = config or ResolveConfig()
    motion.check(skeleton)
    j0 = motion.positions.copy()
    if models is None:
        models = build_models(skeleton, params, j0[0], cfg.sample_counts, cfg.seed)
    regs = _Regularizers(skeleton, j0, cfg)
    n_frames = j0.shape[0]

    def detect(j, posed=None):
        if posed is not None and cfg.threads <= 1:
            return detect_batch(*posed, broad_phase=cfg.broad_phase)
        return detect_positions(models, j, cfg.broad_phase, cfg.threads)

    j = j0.copy()
    posed = pose_pair(models, j)
    report = detect(j, posed)
    curves = {k: [] for k in ("total", "coll", "anchor", "bone", "smooth", "points", "halvings",
                              "accepted")}
    transient, clean_run, status, diagnostic = [], 0, "max_iters", ""
    it = 0
    prev_total, prev_keys = None, None
    for it in range(1, cfg.max_iters + 1):
        loss = collision_loss(report, posed, cfg.mode, cfg.antipodal_on)
        terms = regs.terms(j)
        total = cfg.lambda_coll * loss.value + sum(terms.values())
        if not np.isfinite(total):
            status, diagnostic = "non_finite", f"non-finite loss at iteration {it}"
            log.error(diagnostic)
            break
        keys = report.keys()
        if prev_total is not None and total > prev_total + 1e-10:
            # the accepted step lowered the frozen objective of the previous
            # iteration; re-detection (new points, or old points re-targeted
            # while the point count stays put) can still raise the fresh total
            new_points = not keys <= prev_keys
            transient.append({"iteration": it, "increase": total - prev_total,
                              "new_points": new_points})
            log.info("iteration %d: loss rose by %.3g after re-detection", it, total - prev_total)
        prev_total, prev_keys = total, keys
        curves["total"].append(total)
        curves["coll"].append(cfg.lambda_coll * loss.value)
        for k, v in terms.items():
            curves[k].append(v)
        curves["points"].append(len(report))

        clean_run = clean_run + 1 if report.empty else 0
        if clean_run >= cfg.clean_patience:
            curves["halvings"].append(0)
            status = "clean"
            break

        targets = loss.targets
        grad = regs.grad(j)
        if len(report):
            grad = grad + cfg.lambda_coll * chain_to_joints(loss, report, models, j)
        step = _cap_push(regs.precondition(j, -grad), cfg.max_step)
        clean_frames = np.bincount(report.frame, minlength=n_frames) == 0
        scale = np.ones(n_frames)
        rejected = np.zeros(n_frames, dtype=int)
        cand_report = None
        for halvings in range(cfg.max_halvings + 1):
            cand = j + scale[:, None, None, None] * step
            cand_posed = pose_pair(models, cand)
            value = regs.value(cand)
            if len(report):
                pts = _sample_points(cand_posed, report)
                value += cfg.lambda_coll * float(np.sum((targets - pts) ** 2))
            if not value <= total + 1e-12 * max(1.0, abs(total)):
                scale *= 0.5
                continue
            # frames that are already clean must not be pulled back in; after
            # a few tries such a frame simply holds still this iteration
            accepted = value
            cand_report = detect(cand, cand_posed)
            back_in = clean_frames & (np.bincount(cand_report.frame, minlength=n_frames) > 0)
            if not back_in.any():
                break
            rejected[back_in] += 1
            scale[back_in] = np.where(rejected[back_in] > _REENTRY_TRIES, 0.0, 0.5 * scale[back_in])
            cand_report = None
        curves["halvings"].append(halvings)
        if cand_report is None:
            diagnostic = f"no descent step found at iteration {it}"
            log.info(diagnostic)
            status = "stalled"
            break
        if not np.all(np.isfinite(cand)):
            status, diagnostic = "non_finite", f"non-finite joints at iteration {it}"
            break
        curves["accepted"].append(accepted)
        j, posed, report = cand, cand_posed, cand_report

    refined = MotionSequence(j)
    before = metrics_from_reports(detect(j0).split_frames(len(j0)))
    after = metrics_from_reports(detect(j).split_frames(len(j)))
    rep = ResolveReport(
        iterations=it, status=status, loss_curves=curves, before=before, after=after,
        max_bone_drift_pct=bone_drift_pct(skeleton, j0, j),
        max_joint_displacement=float(np.max(np.linalg.norm(j - j0, axis=-1))),
        transient_increases=transient, diagnostic=diagnostic, config=cfg.to_dict())
    return refined, rep
