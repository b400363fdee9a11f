"""Plausibility metrics on proxy geometry and a slow mesh containment oracle."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .collision import build_models, detect_sequence, pose_pair
from .mesh import TriangleMesh, is_watertight
from .primitives import surface_distance
from .skeleton import MotionSequence, Skeleton

log = logging.getLogger(__name__)


@dataclass(eq=False)
class PlausibilityMetrics:
    coll_dis: float              # meters, sum over frames of the deepest point
    coll_ro: float               # fraction of frames with any collision
    per_frame_depth: np.ndarray  # (F,)

    def to_dict(self):
        return {"coll_dis": self.coll_dis, "coll_ro": self.coll_ro,
                "per_frame_depth": self.per_frame_depth.tolist()}


def metrics_from_reports(reports) -> PlausibilityMetrics:
    depth = np.array([float(r.depth.max()) if len(r) else 0.0 for r in reports])
    hit = np.array([len(r) > 0 for r in reports])
    return PlausibilityMetrics(float(depth.sum()), float(hit.mean()) if len(hit) else 0.0, depth)


def coll_metrics(motion: MotionSequence, params, skeleton: Skeleton, models=None,
                 threads=1, **kw) -> PlausibilityMetrics:
    """coll_dis / coll_ro for a two-person sequence."""
    return metrics_from_reports(detect_sequence(motion, params, skeleton, models=models,
                                                threads=threads, **kw))


# --------------------------------------------------------------------------
# mesh containment


def _require_closed(mesh):
    if not is_watertight(mesh):
        raise ValueError("open mesh")


def winding_numbers(mesh: TriangleMesh, points, chunk=2048):
    """Generalized winding number of each point (solid-angle sum / 4 pi)."""
    tri = mesh.triangles
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(len(pts))
    for lo in range(0, len(pts), chunk):
        p = pts[lo:lo + chunk, None, None, :]
        v = tri[None] - p                                  # (P, T, 3, 3)
        a, b, c = v[..., 0, :], v[..., 1, :], v[..., 2, :]
        la, lb, lc = (np.linalg.norm(x, axis=-1) for x in (a, b, c))
        num = np.einsum("ptk,ptk->pt", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("ptk,ptk->pt", a, b) * lc
               + np.einsum("ptk,ptk->pt", b, c) * la + np.einsum("ptk,ptk->pt", c, a) * lb)
        out[lo:lo + chunk] = 2.0 * np.arctan2(num, den).sum(-1) / (4 * np.pi)
    return out


# A fixed, generic ray direction keeps parity rays off mesh edges in practice.
_RAY = np.array([0.5773, 0.6012, 0.5527])
_RAY = _RAY / np.linalg.norm(_RAY)


def ray_parity(mesh: TriangleMesh, points, direction=_RAY, chunk=1024):
    """Number of ray-triangle crossings (Moller-Trumbore) along ``direction``."""
    tri = mesh.triangles
    v0, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    pvec = np.cross(direction, e2)
    det = np.einsum("tk,tk->t", e1, pvec)
    okd = np.abs(det) > 1e-15
    inv = np.where(okd, 1.0 / np.where(okd, det, 1.0), 0.0)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(len(pts), dtype=int)
    for lo in range(0, len(pts), chunk):
        s = pts[lo:lo + chunk, None, :] - v0[None]
        u = np.einsum("ptk,tk->pt", s, pvec) * inv
        qv = np.cross(s, e1[None])
        w = np.einsum("k,ptk->pt", direction, qv) * inv
        t = np.einsum("ptk,tk->pt", qv, e2) * inv
        hit = okd & (u >= 0) & (w >= 0) & (u + w <= 1) & (t > 0)
        out[lo:lo + chunk] = hit.sum(-1)
    return out


def mesh_contains(mesh: TriangleMesh, p, method="winding"):
    """Point-in-closed-mesh test; ``p`` may be one point or an (n, 3) array."""
    _require_closed(mesh)
    pts = np.asarray(p, dtype=float)
    single = pts.ndim == 1
    if method == "winding":
        inside = winding_numbers(mesh, pts) > 0.5
    elif method == "parity":
        inside = ray_parity(mesh, pts) % 2 == 1
    else:
        raise ValueError(f"unknown containment method {method!r}")
    return bool(inside[0]) if single else inside


def _column_setup(mesh):
    _require_closed(mesh)
    tri = mesh.triangles
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    nz = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    keep = np.abs(nz) > 1e-18
    a, b, c, nz = a[keep], b[keep], c[keep], nz[keep]
    lo, hi = np.minimum(np.minimum(a, b), c), np.maximum(np.maximum(a, b), c)
    return a, b, c, nz, lo, hi


def _grid_slice(setup, x, ys, zs):
    """Containment on the plane x = const, (Y, Z) bool."""
    a, b, c, nz, lo, hi = setup
    out = np.zeros((len(ys), len(zs)), dtype=bool)
    col = (lo[:, 0] <= x) & (hi[:, 0] >= x)
    if not col.any():
        return out
    ta, tb, tc, tn = a[col], b[col], c[col], nz[col]
    tlo, thi = lo[col], hi[col]
    y = np.asarray(ys, dtype=float)[:, None]
    rows = (tlo[None, :, 1] <= y) & (thi[None, :, 1] >= y)
    # barycentric coordinates in the xy projection
    px, py = x - ta[:, 0], y - ta[:, 1]
    e1x, e1y = tb[:, 0] - ta[:, 0], tb[:, 1] - ta[:, 1]
    e2x, e2y = tc[:, 0] - ta[:, 0], tc[:, 1] - ta[:, 1]
    s = (px * e2y - py * e2x) / tn
    t = (e1x * py - e1y * px) / tn
    hit = rows & (s >= 0) & (t >= 0) & (s + t <= 1)
    zint = ta[:, 2] + s * (tb[:, 2] - ta[:, 2]) + t * (tc[:, 2] - ta[:, 2])
    sign = np.sign(tn)
    for j in np.nonzero(hit.any(1))[0]:
        h = hit[j]
        wind = (sign[h][None, :] * (zint[j, h][None, :] > zs[:, None])).sum(1)
        out[j] = wind > 0
    return out


def grid_contains(mesh: TriangleMesh, xs, ys, zs):
    """Containment of every point of an axis-aligned probe grid, (X, Y, Z) bool.

    Casts one +z ray per (x, y) column and accumulates signed crossings, so a
    union of overlapping closed parts counts as inside where any part is.
    """
    setup = _column_setup(mesh)
    zs = np.asarray(zs, dtype=float)
    return np.stack([_grid_slice(setup, x, ys, zs) for x in np.asarray(xs, dtype=float)])


def proxy_signed_distance(posed, frame, points, segments=None):
    """Union signed distance (min over primitives) of one person's proxies.

    ``segments`` limits the union to a subset; points far from all of them
    then read ``inf``.
    """
    pts = np.asarray(points, dtype=float)
    best = np.full(len(pts), np.inf)
    for j in range(len(posed.model.kinds)) if segments is None else segments:
        kind = posed.model.kinds[j]
        if not posed.valid[frame, j]:
            continue
        prim = posed.primitive(frame, j)
        best = np.minimum(best, surface_distance(kind, prim.dims, prim.to_local(pts)))
    return best


def proxy_vs_mesh_agreement(meshes, params, skeleton: Skeleton, pose, resolution=0.005,
                            band=None, models=None):
    """Probe-grid comparison of proxy occupancy against mesh occupancy.

    ``meshes`` and ``params`` hold one entry per person, ``pose`` is
    (2, N, 3).  Probes within ``band`` of any proxy surface are ignored
    (default: one grid step).  Reports confusion counts per person for
    occupancy and for the two-person overlap (collision) region.
    """
    pose = np.asarray(pose, dtype=float)
    if band is None:
        band = resolution
    if models is None:
        models = build_models(skeleton, params, pose)
    posed = pose_pair(models, pose[None])
    spheres = [b.sphere() for b in posed]
    lo = np.min([m.vertices.min(0) for m in meshes], axis=0) - 2 * resolution
    hi = np.max([m.vertices.max(0) for m in meshes], axis=0) + 2 * resolution
    # odd fractional offsets keep probe columns off mesh edges
    xs, ys, zs = (np.arange(lo[k], hi[k], resolution) + resolution * (0.4567, 0.3821, 0.4139)[k]
                  for k in range(3))
    setups = [_column_setup(m) for m in meshes]
    yz = np.stack(np.meshgrid(ys, zs, indexing="ij"), -1).reshape(-1, 2)
    keys = ("person0", "person1", "collision")
    counts = {k: np.zeros(4, dtype=np.int64) for k in keys}
    probes = 0
    for x in xs:
        pts = np.column_stack([np.full(len(yz), x), yz])
        mesh_in, prox_in = [], []
        near = np.zeros(len(pts), dtype=bool)
        for p in range(2):
            mesh_in.append(_grid_slice(setups[p], x, ys, zs).ravel())
            c, r = spheres[p]
            segs = np.nonzero(np.abs(c[0, :, 0] - x) <= r[0] + band)[0]
            sd = proxy_signed_distance(posed[p], 0, pts, segs)
            prox_in.append(sd < 0)
            near |= np.abs(sd) < band
        keep = ~near
        probes += int(keep.sum())
        pairs = [(prox_in[0], mesh_in[0]), (prox_in[1], mesh_in[1]),
                 (prox_in[0] & prox_in[1], mesh_in[0] & mesh_in[1])]
        for k, (pred, truth) in zip(keys, pairs):
            pred, truth = pred[keep], truth[keep]
            counts[k] += [np.sum(pred & truth), np.sum(pred & ~truth),
                          np.sum(~pred & truth), np.sum(~pred & ~truth)]
    out = {"resolution": resolution, "band": band, "probes": probes}
    for k in keys:
        tp, fp, fn, tn = (int(v) for v in counts[k])
        out[k] = {"tp": tp, "fp": fp, "fn": fn, "tn": tn,
                  "precision": tp / (tp + fp) if tp + fp else 1.0,
                  "recall": tp / (tp + fn) if tp + fn else 1.0}
    return out
