"""Inter-person collision detection between posed proxy bodies.

A collision point is a surface sample of one person strictly inside a
primitive of the other person.  Detection is batched over frames: the host's
samples are culled against per-primitive bounding spheres, then tested
exactly against each container primitive.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .primitives import cuboid_inside, cylinder_inside
from .skeleton import BodyModel, MotionSequence, PosedBatch, Skeleton, frame_arrays

_INT_FIELDS = ("frame", "host_person", "host_segment", "sample_index", "sample_flat",
               "container_segment")


@dataclass(frozen=True)
class CollisionPoint:
    p_world: tuple
    host_person: int
    host_segment: int
    sample_index: int
    container_segment: int
    depth: float


@dataclass(eq=False)
class CollisionReport:
    """Collision points as parallel arrays.

    ``frame`` indexes the posed batch the report was detected on (always 0 for
    :func:`detect_frame`); ``frame_index`` is the sequence frame for per-frame
    reports.  ``sample_flat`` indexes the host model's concatenated samples.
    """
    frame_index: int | None
    frame: np.ndarray
    host_person: np.ndarray
    host_segment: np.ndarray
    sample_index: np.ndarray
    sample_flat: np.ndarray
    container_segment: np.ndarray
    depth: np.ndarray
    p_world: np.ndarray

    def __len__(self):
        return len(self.depth)

    @property
    def empty(self):
        return len(self) == 0

    @property
    def points(self):
        return [CollisionPoint(tuple(self.p_world[i]), int(self.host_person[i]),
                               int(self.host_segment[i]), int(self.sample_index[i]),
                               int(self.container_segment[i]), float(self.depth[i]))
                for i in range(len(self))]

    @property
    def per_segment_groups(self):
        """(host_person, host_segment) -> {container_segment: [point indices]}."""
        groups = {}
        for i in range(len(self)):
            key = (int(self.host_person[i]), int(self.host_segment[i]))
            groups.setdefault(key, {}).setdefault(int(self.container_segment[i]), []).append(i)
        return groups

    def keys(self):
        """Identity of every point, for set comparisons."""
        return set(zip(self.frame.tolist(), self.host_person.tolist(),
                       self.host_segment.tolist(), self.sample_index.tolist(),
                       self.container_segment.tolist()))

    def select(self, mask, frame_index=None):
        kw = {f: getattr(self, f)[mask] for f in _INT_FIELDS}
        return CollisionReport(frame_index, depth=self.depth[mask], p_world=self.p_world[mask], **kw)

    def split_frames(self, n_frames):
        order = np.argsort(self.frame, kind="stable")
        bounds = np.searchsorted(self.frame[order], np.arange(n_frames + 1))
        return [self.select(order[bounds[f]:bounds[f + 1]], frame_index=f) for f in range(n_frames)]

    def to_json(self, guidance=None):
        pts = []
        for i in range(len(self)):
            d = {"person": int(self.host_person[i]), "segment": int(self.host_segment[i]),
                 "sample": int(self.sample_index[i]), "container": int(self.container_segment[i]),
                 "depth": float(self.depth[i]), "xyz": self.p_world[i].tolist()}
            if guidance is not None:
                d["included"] = bool(guidance.included[i])
                d["d"] = guidance.directions[i].tolist()
                d["q"] = guidance.targets_q[i].tolist()
            pts.append(d)
        return {"frame": self.frame_index, "points": pts}


def _empty_report(frame_index=None):
    z = np.zeros(0, dtype=int)
    return CollisionReport(frame_index, z, z, z, z, z, z, np.zeros(0), np.zeros((0, 3)))


_CHUNK = 1 << 18  # candidate samples tested per block


def _detect_direction(host: PosedBatch, cont: PosedBatch, broad_phase):
    """Host samples strictly inside container primitives.

    Candidates are (frame, host segment, container) triples that survive the
    sphere cull, expanded to every host sample of that segment.
    """
    hm = host.model
    n_host = len(hm.kinds)
    lo = np.zeros(n_host, dtype=int)
    cnt = np.zeros(n_host, dtype=int)
    for j, a, b in hm._slices:
        lo[j], cnt[j] = a, b - a
    mask = host.valid[:, :, None] & cont.valid[:, None, :] & (cnt > 0)[None, :, None]
    if broad_phase:
        hc, hr = host.sphere()
        cc, cr = cont.sphere()
        dist = np.linalg.norm(hc[:, :, None, :] - cc[:, None, :, :], axis=-1)
        mask &= dist <= hr[:, :, None] + cr[:, None, :]
    f_t, h_t, c_t = np.nonzero(mask)
    if len(f_t) == 0:
        return []
    n_t = cnt[h_t]
    ends = np.cumsum(n_t)
    out = []
    start_t = 0
    while start_t < len(f_t):
        base = ends[start_t - 1] if start_t else 0
        stop_t = int(np.searchsorted(ends, base + _CHUNK, side="right"))
        stop_t = max(stop_t, start_t + 1)
        sl = slice(start_t, stop_t)
        reps = n_t[sl]
        f_idx = np.repeat(f_t[sl], reps)
        cseg = np.repeat(c_t[sl], reps)
        first = np.repeat(np.cumsum(reps) - reps, reps)
        s_idx = np.repeat(lo[h_t[sl]], reps) + np.arange(len(f_idx)) - first
        if broad_phase:
            # per-sample sphere test; conservative, so the report is unchanged
            diff = host.samples[f_idx, s_idx] - cc[f_idx, cseg]
            near = np.einsum("ij,ij->i", diff, diff) <= cr[f_idx, cseg] ** 2
            f_idx, s_idx, cseg = f_idx[near], s_idx[near], cseg[near]
        out.extend(_narrow_phase(host, cont, f_idx, s_idx, cseg))
        start_t = stop_t
    return out


def _narrow_phase(host, cont, f_idx, s_idx, cseg):
    if len(f_idx) == 0:
        return []
    cm = cont.model
    pts = host.samples[f_idx, s_idx]
    o = cont.origins[f_idx, cseg]
    b = cont.bases[f_idx, cseg]
    dims = cont.dims[f_idx, cseg]
    cyl = cm.is_cylinder[cseg]
    inside = np.zeros(len(pts), dtype=bool)
    if cyl.any():
        inside[cyl] = cylinder_inside(pts[cyl], o[cyl], b[cyl][:, :, 2], dims[cyl, 1], dims[cyl, 0])
    box = ~cyl
    if box.any():
        inside[box] = cuboid_inside(pts[box], o[box], b[box], dims[box])
    if not inside.any():
        return []
    f_idx, s_idx, cseg, pts, o, b, dims, cyl = (x[inside] for x in (f_idx, s_idx, cseg, pts, o, b,
                                                                    dims, cyl))
    w = pts - o
    loc = np.stack([w[:, 0] * b[:, 0, k] + w[:, 1] * b[:, 1, k] + w[:, 2] * b[:, 2, k]
                    for k in range(3)], axis=-1)
    radial = np.sqrt(loc[:, 0] ** 2 + loc[:, 1] ** 2)
    d_cyl = np.minimum(dims[:, 0] - radial, np.minimum(loc[:, 2], dims[:, 1] - loc[:, 2]))
    d_box = np.min(dims - np.abs(loc), axis=-1)
    depth = np.where(cyl, d_cyl, d_box)
    return [(f_idx, s_idx, cseg, depth, pts)]


def detect_batch(a: PosedBatch, b: PosedBatch, broad_phase=True) -> CollisionReport:
    """All collision points between two posed persons over every frame."""
    if a.frames != b.frames:
        raise ValueError("both persons must be posed for the same frames")
    parts = []
    for person, (host, cont) in enumerate(((a, b), (b, a))):
        for f_idx, s_idx, cont_seg, depth, pts in _detect_direction(host, cont, broad_phase):
            parts.append((f_idx, np.full(len(f_idx), person), host.model.sample_seg[s_idx],
                          host.model.sample_idx[s_idx], s_idx, cont_seg, depth, pts))
    if not parts:
        return _empty_report()
    cols = [np.concatenate([p[i] for p in parts]) for i in range(8)]
    frame, person, hseg, sidx, sflat, cseg, depth, pts = cols
    order = np.lexsort((cseg, sflat, person, frame))
    return CollisionReport(None, frame[order], person[order], hseg[order], sidx[order],
                           sflat[order], cseg[order], depth[order], pts[order])


def detect_frame(proxies_a: PosedBatch, proxies_b: PosedBatch, broad_phase=True,
                 frame_index=0) -> CollisionReport:
    """Collision report for one frame; both batches must hold a single frame."""
    if proxies_a.frames != 1 or proxies_b.frames != 1:
        raise ValueError("detect_frame expects single-frame poses")
    rep = detect_batch(proxies_a, proxies_b, broad_phase)
    rep.frame_index = frame_index
    return rep


def build_models(skeleton: Skeleton, params, ref_pose=None, sample_counts=None, seed=0):
    """One :class:`BodyModel` per person.

    ``ref_pose`` (2, N, 3) supplies reference segment lengths for proxies that
    do not carry their own ``ref_length``.
    """
    models = []
    for p in range(2):
        ref = None if ref_pose is None else frame_arrays(skeleton, ref_pose[p])[2]
        models.append(BodyModel(skeleton, params[p], ref_lengths=ref,
                                sample_counts=sample_counts, seed=seed))
    return tuple(models)


def pose_pair(models, positions):
    positions = np.asarray(positions, dtype=float)
    return models[0].pose(positions[:, 0]), models[1].pose(positions[:, 1])


def detect_positions(models, positions, broad_phase=True, threads=1) -> CollisionReport:
    """Batched detection over an (F, 2, N, 3) position array."""
    positions = np.asarray(positions, dtype=float)
    n = positions.shape[0]
    if threads <= 1 or n < 2 * threads:
        return detect_batch(*pose_pair(models, positions), broad_phase=broad_phase)
    bounds = np.linspace(0, n, threads + 1).astype(int)

    def work(k):
        lo, hi = bounds[k], bounds[k + 1]
        rep = detect_batch(*pose_pair(models, positions[lo:hi]), broad_phase=broad_phase)
        rep.frame = rep.frame + lo
        return rep

    with ThreadPoolExecutor(threads) as pool:
        reps = list(pool.map(work, range(threads)))
    kw = {f: np.concatenate([getattr(r, f) for r in reps]) for f in _INT_FIELDS}
    return CollisionReport(None, depth=np.concatenate([r.depth for r in reps]),
                           p_world=np.concatenate([r.p_world for r in reps]), **kw)


def detect_sequence(motion: MotionSequence, params, skeleton: Skeleton, models=None,
                    broad_phase=True, threads=1, sample_counts=None, seed=0) -> list:
    """One report per frame, in frame order."""
    motion.check(skeleton)
    if models is None:
        models = build_models(skeleton, params, motion.positions[0], sample_counts, seed)
    rep = detect_positions(models, motion.positions, broad_phase, threads)
    return rep.split_frames(motion.frame_count)
