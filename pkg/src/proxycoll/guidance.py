"""Escape directions for collision points and the frozen-target collision loss.

Each collision point ``p`` gets a unit direction ``d`` toward the antipode of
its sample on the host primitive.  The loss for that point is
``||target - p||^2`` with ``target = p + d`` held constant, so its value is
``||d||^2`` and its gradient with respect to ``p`` is ``-2 d``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .collision import CollisionPoint, CollisionReport
from .primitives import AXIS_EPS, antipodal_local
from .skeleton import PosedPrimitive

log = logging.getLogger(__name__)

PER_POINT = "per_point"
AGGREGATED = "aggregated"
MODES = (PER_POINT, AGGREGATED, "auto")
HOST, CONTAINER = "host", "container"


@dataclass(frozen=True, eq=False)
class GuidanceVector:
    d: np.ndarray
    point_ref: int
    q_world: np.ndarray


def guidance_vector(cp: CollisionPoint, host_primitive: PosedPrimitive, local_sample,
                    point_ref=0) -> GuidanceVector:
    """Direction from a collision point to the antipode of its host sample.

    Raises ``ValueError`` when the antipode is undefined (sample on a
    cylinder axis); callers skip such points.
    """
    local_sample = np.asarray(local_sample, dtype=float)
    q_local, ok = antipodal_local(host_primitive.kind, local_sample)
    if not ok:
        raise ValueError("undefined antipodal")
    q = host_primitive.to_world(q_local)
    diff = q - np.asarray(cp.p_world, dtype=float)
    return GuidanceVector(diff / np.linalg.norm(diff), point_ref, q)


def group_direction(unit_vectors):
    """Renormalized mean of a group's unit guidance vectors (zero if they cancel)."""
    m = np.mean(np.asarray(unit_vectors, dtype=float), axis=0)
    n = np.linalg.norm(m)
    return m / n if n > 1e-12 else np.zeros(3)


def aggregate_directions(groups):
    """Count-weighted mean of per-group directions, not renormalized.

    ``groups`` is a sequence of ``(count, direction)`` pairs.
    """
    groups = [(int(n), np.asarray(d, dtype=float)) for n, d in groups if n > 0]
    if not groups:
        raise ValueError("no collision points to aggregate")
    total = sum(n for n, _ in groups)
    return sum(n * d for n, d in groups) / total


@dataclass(eq=False)
class LossOutput:
    value: float
    grad_samples: np.ndarray   # (K, 3), aligned with the report's points
    directions: np.ndarray     # per-point unit guidance vectors d_i
    effective: np.ndarray      # direction actually used (d_i or d_total)
    targets_q: np.ndarray      # antipodal target points q_i
    included: np.ndarray       # False where the antipode is undefined
    p_world: np.ndarray
    aggregated_keys: list = field(default_factory=list)

    @property
    def targets(self):
        """Frozen loss targets ``p + d_eff`` (constants of this evaluation)."""
        return self.p_world + self.effective


def guidance_arrays(report: CollisionReport, posed, antipodal_on=HOST):
    """Per-point (d, q, ok) for a report detected on the posed pair ``posed``."""
    k = len(report)
    d = np.zeros((k, 3))
    q = np.zeros((k, 3))
    ok = np.zeros(k, dtype=bool)
    for person in (0, 1):
        sel = np.nonzero(report.host_person == person)[0]
        if len(sel) == 0:
            continue
        f = report.frame[sel]
        p = report.p_world[sel]
        if antipodal_on == HOST:
            batch = posed[person]
            seg = report.host_segment[sel]
            loc = batch.sample_local[f, report.sample_flat[sel]]
            cyl = batch.model.is_cylinder[seg]
        elif antipodal_on == CONTAINER:
            batch = posed[1 - person]
            seg = report.container_segment[sel]
            o, b = batch.origins[f, seg], batch.bases[f, seg]
            loc = np.einsum("ki,kij->kj", p - o, b)
            cyl = batch.model.is_cylinder[seg]
        else:
            raise ValueError(f"antipodal_on must be 'host' or 'container', got {antipodal_on!r}")
        q_loc = -loc
        q_loc[cyl, 2] = loc[cyl, 2]
        good = ~cyl | (np.hypot(loc[:, 0], loc[:, 1]) >= AXIS_EPS)
        o, b = batch.origins[f, seg], batch.bases[f, seg]
        qw = o + np.einsum("kij,kj->ki", b, q_loc)
        diff = qw - p
        dist = np.linalg.norm(diff, axis=-1)
        good &= dist > 1e-12
        d[sel] = np.where(good[:, None], diff / np.where(good, dist, 1.0)[:, None], 0.0)
        q[sel] = qw
        ok[sel] = good
    return d, q, ok


def collision_loss(report: CollisionReport, posed, mode="auto", antipodal_on=HOST) -> LossOutput:
    """Frozen-target collision loss and its gradient at every collision point.

    ``posed`` is the pair of posed batches the report was detected on.  In
    ``per_point`` mode each point uses its own direction.  In ``aggregated``
    (alias ``auto``) mode, a host segment whose points sit in two or more
    container primitives of the same frame uses the count-weighted mean of
    the per-container group directions for all of its points.
    """
    if mode not in MODES:
        raise ValueError(f"unknown loss mode {mode!r}")
    d, q, ok = guidance_arrays(report, posed, antipodal_on)
    eff = d.copy()
    agg_keys = []
    if mode != PER_POINT and len(report):
        idx = np.nonzero(ok)[0]
        keys = np.stack([report.frame[idx], report.host_person[idx], report.host_segment[idx]], axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.ravel()
        for g in range(len(uniq)):
            members = idx[inv == g]
            conts = report.container_segment[members]
            cids = np.unique(conts)
            if len(cids) < 2:
                continue
            groups = [(int(np.sum(conts == c)), group_direction(d[members[conts == c]])) for c in cids]
            total = aggregate_directions(groups)
            if np.linalg.norm(total) < 1e-12:
                log.info("aggregated direction vanished for frame %d person %d segment %d",
                         *uniq[g])
            eff[members] = total
            agg_keys.append(tuple(int(x) for x in uniq[g]))
    eff[~ok] = 0.0
    value = float(np.sum(eff * eff))
    return LossOutput(value, -2.0 * eff, d, eff, q, ok, report.p_world, agg_keys)


def frozen_objective(targets, points):
    """Value of the frozen-target quadratic at moved collision points."""
    diff = np.asarray(targets) - np.asarray(points)
    return float(np.sum(diff * diff))


def chain_to_joints(loss: LossOutput, report: CollisionReport, models, positions):
    """Joint-position gradient of the collision loss, shape (F, 2, N, 3).

    ``positions`` are the (F, 2, N, 3) joints the report was detected on;
    ``models`` the two :class:`BodyModel` used to pose them.
    """
    positions = np.asarray(positions, dtype=float)
    out = np.zeros_like(positions)
    for person in (0, 1):
        sel = report.host_person == person
        if not sel.any():
            continue
        out[:, person] = models[person].sample_vjp(
            positions[:, person], report.frame[sel], report.sample_flat[sel],
            loss.grad_samples[sel])
    return out
