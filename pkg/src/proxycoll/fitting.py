"""Fit proxy dimensions to a body mesh by gradient descent on the fitting loss.

The fitting loss sums, over every primitive ``j`` and each of its surface
samples ``q``, the squared distance from ``q`` to the nearest vertex of the
mesh region assigned to segment ``j``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriangleMesh
from .primitives import CYLINDER, DEFAULT_SAMPLE_COUNTS, ProxyParams, SegmentProxy, sample_surface
from .skeleton import BodyModel, Skeleton, frame_arrays

log = logging.getLogger(__name__)

MIN_DIM = 1e-3


@dataclass
class FitConfig:
    learning_rate: float = 1e-2
    max_iters: int = 2000
    convergence_tol: float = 1e-8
    sample_counts: dict | None = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.convergence_tol <= 0 or self.max_iters < 0:
            raise ValueError("fit config values must be positive")
        for n in (self.sample_counts or {}).values():
            if n < 1:
                raise ValueError("sample counts must be positive")

    def counts(self):
        c = dict(DEFAULT_SAMPLE_COUNTS)
        c.update(self.sample_counts or {})
        return c


@dataclass(eq=False)
class RegionAssignment:
    region_of_vertex: np.ndarray  # (V,) segment index per vertex
    n_segments: int

    def members(self, j):
        return np.nonzero(self.region_of_vertex == j)[0]


@dataclass
class FitReport:
    final_loss: float
    iters: int
    loss_history: list = field(default_factory=list)
    converged: bool = False

    def to_dict(self):
        return {"final_loss": self.final_loss, "iters": self.iters,
                "converged": self.converged, "loss_history": list(self.loss_history)}


def point_segment_distance(points, a, b):
    """Distances (V, M) from points to line segments ``a[m]``-``b[m]``."""
    p = np.asarray(points, dtype=float)[:, None, :]
    ab = b - a
    denom = np.einsum("mk,mk->m", ab, ab)
    t = np.einsum("vmk,mk->vm", p - a, ab) / np.where(denom > 0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1)


def assign_regions(mesh: TriangleMesh, skeleton: Skeleton, rest_pose) -> RegionAssignment:
    """Each vertex goes to the segment nearest in point-to-segment distance."""
    if mesh is None or len(mesh.vertices) == 0:
        raise ValueError("empty mesh")
    rest_pose = np.asarray(rest_pose, dtype=float)
    if rest_pose.shape != (skeleton.n_joints, 3):
        raise ValueError(f"rest pose must be ({skeleton.n_joints}, 3), got {rest_pose.shape}")
    a = rest_pose[[s.joint_a for s in skeleton.segments]]
    b = rest_pose[[s.joint_b for s in skeleton.segments]]
    dist = point_segment_distance(mesh.vertices, a, b)
    return RegionAssignment(np.argmin(dist, axis=1), skeleton.n_segments)  # first minimum wins


def _region_trees(mesh, regions):
    trees = []
    for j in range(regions.n_segments):
        idx = regions.members(j)
        trees.append(cKDTree(mesh.vertices[idx]) if len(idx) else None)
    return trees


def fit_loss(params: ProxyParams, mesh: TriangleMesh, regions: RegionAssignment,
             skeleton: Skeleton, rest_pose, sample_counts=None, seed=0, _trees=None) -> float:
    """Sum of squared nearest-region-vertex distances over all proxy samples."""
    rest_pose = np.asarray(rest_pose, dtype=float)
    lengths = frame_arrays(skeleton, rest_pose)[2]
    model = BodyModel(skeleton, params, ref_lengths=lengths, sample_counts=sample_counts, seed=seed)
    samples = model.pose(rest_pose).samples[0]
    trees = _trees if _trees is not None else _region_trees(mesh, regions)
    per_seg = np.zeros(skeleton.n_segments)
    for j in range(skeleton.n_segments):
        if trees[j] is None:
            log.warning("segment %d has an empty mesh region; it contributes 0", j)
            continue
        d, _ = trees[j].query(samples[model.sample_seg == j])
        per_seg[j] = np.sum(d * d)
    return float(np.sum(per_seg))


def brute_force_fit_loss(params, mesh, regions, skeleton, rest_pose, sample_counts=None, seed=0):
    """Reference double loop over (sample, region vertex) pairs."""
    rest_pose = np.asarray(rest_pose, dtype=float)
    lengths = frame_arrays(skeleton, rest_pose)[2]
    model = BodyModel(skeleton, params, ref_lengths=lengths, sample_counts=sample_counts, seed=seed)
    samples = model.pose(rest_pose).samples[0]
    total = 0.0
    for q, j in zip(samples, model.sample_seg):
        best = None
        for v in regions.members(j):
            diff = q - mesh.vertices[v]
            d2 = float(diff[0] ** 2 + diff[1] ** 2 + diff[2] ** 2)
            best = d2 if best is None or d2 < best else best
        total += best or 0.0
    return total


def initial_params(mesh, regions, skeleton, rest_pose) -> ProxyParams:
    """Data-driven starting sizes: median radial spread for cylinders, the
    90th percentile of local extents for cuboids."""
    a, u, length, basis, _ = frame_arrays(skeleton, np.asarray(rest_pose, dtype=float))
    out = []
    for j, seg in enumerate(skeleton.segments):
        pts = mesh.vertices[regions.members(j)]
        if seg.primitive_kind == CYLINDER:
            r = 0.05
            if len(pts):
                loc = (pts - a[j]) @ basis[j]
                r = float(np.median(np.hypot(loc[:, 0], loc[:, 1])))
            out.append(SegmentProxy(CYLINDER, r=max(r, MIN_DIM), h_scale=1.0))
        else:
            e = np.full(3, 0.05)
            if len(pts):
                loc = (pts - (a[j] + 0.5 * length[j] * u[j])) @ basis[j]
                e = np.percentile(np.abs(loc), 90, axis=0)
            out.append(SegmentProxy(seg.primitive_kind, half_extents=tuple(np.maximum(e, MIN_DIM))))
    return ProxyParams(out)


def _unpack(params, skeleton):
    """Per-segment parameter vectors: (r, h_scale, -) or half extents."""
    theta = np.zeros((skeleton.n_segments, 3))
    for j, p in enumerate(params.segments):
        theta[j] = (p.r, p.h_scale, 0.0) if p.kind == CYLINDER else p.half_extents
    return theta


def _pack(theta, params, lengths):
    out = []
    for j, p in enumerate(params.segments):
        if p.kind == CYLINDER:
            out.append(SegmentProxy(CYLINDER, r=float(theta[j, 0]), h_scale=float(theta[j, 1]),
                                    ref_length=float(lengths[j])))
        else:
            out.append(SegmentProxy(p.kind, half_extents=tuple(float(x) for x in theta[j]),
                                    ref_length=float(lengths[j])))
    return ProxyParams(out, dict(params.sample_counts))


def fit_proxies(mesh: TriangleMesh, skeleton: Skeleton, rest_pose, config: FitConfig | None = None,
                init: ProxyParams | None = None, regions: RegionAssignment | None = None):
    """Gradient descent on cylinder (r, h_scale) and cuboid half extents.

    Each primitive keeps the sample layout drawn at its starting size, with
    sample coordinates stored as fractions of the current dimensions, so the
    objective is a continuous function of the sizes.  Nearest region vertices
    are re-queried every iteration and held fixed for the gradient.  Returns
    ``(params, FitReport)``.
    """
    config = config or FitConfig()
    rest_pose = np.asarray(rest_pose, dtype=float)
    if regions is None:
        regions = assign_regions(mesh, skeleton, rest_pose)
    if init is None:
        init = initial_params(mesh, regions, skeleton, rest_pose)
    counts = config.counts()
    a, u, length, basis, deg = frame_arrays(skeleton, rest_pose)
    trees = _region_trees(mesh, regions)
    diag = mesh.bbox_diagonal()
    M = skeleton.n_segments

    theta = _unpack(init, skeleton)
    cyl = np.array([p.kind == CYLINDER for p in init.segments])
    # fractional sample templates, fixed for the whole run
    fracs = []
    for j, p in enumerate(init.segments):
        dims = p.dims(length[j])
        loc = sample_surface(p.kind, dims, counts[p.kind], seed=config.seed + j).local_points
        scale = np.array([dims[0], dims[0], dims[1]]) if cyl[j] else np.asarray(dims)
        fracs.append(loc / scale)
    upper = np.where(cyl[:, None], np.stack([np.full(M, diag), diag / np.maximum(length, 1e-12),
                                             np.ones(M)], 1), diag)
    active = np.array([trees[j] is not None and not deg[j] for j in range(M)])

    def evaluate(th):
        loss, grad = 0.0, np.zeros_like(th)
        for j in np.nonzero(active)[0]:
            f = fracs[j]
            if cyl[j]:
                scale = np.array([th[j, 0], th[j, 0], th[j, 1] * length[j]])
                origin = a[j]
            else:
                scale = th[j]
                origin = a[j] + 0.5 * length[j] * u[j]
            q = origin + (f * scale) @ basis[j].T
            dist, nn = trees[j].query(q)
            if not np.all(np.isfinite(dist)):
                return np.inf, grad     # the tree reports a miss as index n
            res = q - trees[j].data[nn]
            loss += float(np.sum(res * res))
            g_loc = 2.0 * res @ basis[j]          # gradient w.r.t. local coords
            gs = np.sum(g_loc * f, axis=0)         # w.r.t. per-axis scale
            if cyl[j]:
                grad[j, 0] = gs[0] + gs[1]
                grad[j, 1] = gs[2] * length[j]
            else:
                grad[j] = gs
        return loss, grad

    history = []
    loss, grad = evaluate(theta)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite fitting loss at initialization")
    history.append(loss)
    quiet, converged, it = 0, False, 0
    for it in range(1, config.max_iters + 1):
        theta = np.clip(theta - config.learning_rate * grad, MIN_DIM, upper)
        theta[cyl, 2] = 0.0
        new_loss, grad = evaluate(theta)
        if not np.isfinite(new_loss):
            raise FloatingPointError(f"non-finite fitting loss at iteration {it}")
        quiet = quiet + 1 if abs(new_loss - loss) < config.convergence_tol else 0
        loss = new_loss
        history.append(loss)
        if quiet >= 10:
            converged = True
            break
    else:
        it = config.max_iters

    params = _pack(theta, init, length) if it else init
    final = fit_loss(params, mesh, regions, skeleton, rest_pose, counts, config.seed, _trees=trees)
    return params, FitReport(final, it, history, converged)
