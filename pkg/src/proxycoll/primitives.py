"""Analytic cylinder and cuboid geometry.

Local frames used throughout the package:

* cylinder: origin at the bottom-cap center, axis along local +z, the solid
  occupies ``hypot(x, y) < r`` and ``0 <= z <= h``.
* cuboid: origin at the box center, axes aligned with the local basis, the
  solid occupies ``|x_k| < e_k``.

World placement is ``world = origin + basis @ local`` with the basis stored
column-wise (column 2 is the segment axis for both kinds).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CYLINDER = "cylinder"
CUBOID = "cuboid"
KINDS = (CYLINDER, CUBOID)

#: Boundary band for the strict containment comparators.
BOUNDARY_EPS = 1e-9
#: Radial distance below which a cylinder point has no antipode.
AXIS_EPS = 1e-9

DEFAULT_SAMPLE_COUNTS = {CYLINDER: 30, CUBOID: 36}
SAMPLE_COUNT_GRID = {CYLINDER: (10, 30, 50), CUBOID: (16, 36, 64)}

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0  # 1/phi


def _as_points(p):
    p = np.asarray(p, dtype=float)
    return p, p.ndim == 1


@dataclass(frozen=True, eq=False)
class Cylinder:
    a: np.ndarray
    axis_unit: np.ndarray
    h: float
    r: float

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        v = np.asarray(self.axis_unit, dtype=float)
        object.__setattr__(self, "axis_unit", v)
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("cylinder axis must be a unit vector")
        if not (self.h > 0 and self.r > 0):
            raise ValueError("cylinder needs h > 0 and r > 0")


@dataclass(frozen=True, eq=False)
class Cuboid:
    center: np.ndarray
    basis: np.ndarray
    half_extents: np.ndarray
    face_vertices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        b = np.asarray(self.basis, dtype=float)
        e = np.asarray(self.half_extents, dtype=float)
        if b.shape != (3, 3) or not np.allclose(b.T @ b, np.eye(3), atol=1e-9):
            raise ValueError("cuboid basis must be orthonormal 3x3")
        if e.shape != (3,) or np.any(e <= 0):
            raise ValueError("cuboid half extents must be three positive lengths")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "basis", b)
        object.__setattr__(self, "half_extents", e)
        # diagonal corner pair (+,+,+) / (-,-,-) lies on both faces of every axis
        corner = b @ e
        fv = np.empty((3, 2, 3))
        fv[:, 0] = c + corner
        fv[:, 1] = c - corner
        object.__setattr__(self, "face_vertices", fv)


def cuboid_inside(points, center, basis, half_extents, eps=BOUNDARY_EPS):
    """Face-pair test; ``points`` is (..., 3) and the cuboid arrays broadcast
    against it (``basis`` (..., 3, 3), ``half_extents`` (..., 3)).

    For each box axis the point's offsets from the two diagonal vertices are
    projected on the face normal; their product is negative iff the point is
    between that face pair.  Offsets within ``eps`` of zero count as outside.
    """
    c = np.asarray(center, dtype=float)
    b = np.asarray(basis, dtype=float)
    e = np.asarray(half_extents, dtype=float)
    corner = [b[..., i, 0] * e[..., 0] + b[..., i, 1] * e[..., 1] + b[..., i, 2] * e[..., 2]
              for i in range(3)]
    inside = np.ones(np.broadcast_shapes(points.shape[:-1], c.shape[:-1]), dtype=bool)
    for k in range(3):
        n = b[..., :, k]
        s1 = sum((points[..., i] - (c[..., i] + corner[i])) * n[..., i] for i in range(3))
        s2 = sum((points[..., i] - (c[..., i] - corner[i])) * n[..., i] for i in range(3))
        inside &= (s1 * s2 < 0) & (np.abs(s1) > eps) & (np.abs(s2) > eps)
    return inside


def cylinder_inside(points, a, axis_unit, h, r):
    """Radial/height test; ``points`` is (..., 3), cylinder arrays broadcast."""
    a = np.asarray(a, dtype=float)
    v = np.asarray(axis_unit, dtype=float)
    w0 = points[..., 0] - a[..., 0]
    w1 = points[..., 1] - a[..., 1]
    w2 = points[..., 2] - a[..., 2]
    z = w0 * v[..., 0] + w1 * v[..., 1] + w2 * v[..., 2]
    q0 = w0 - z * v[..., 0]
    q1 = w1 - z * v[..., 1]
    q2 = w2 - z * v[..., 2]
    radial = np.sqrt(q0 * q0 + q1 * q1 + q2 * q2)
    return (radial < r) & (z >= 0.0) & (z <= h)


def contains_cuboid(c: Cuboid, p):
    p, single = _as_points(p)
    out = cuboid_inside(p, c.center, c.basis, c.half_extents)
    return bool(out) if single else out


def contains_cylinder(c: Cylinder, p):
    p, single = _as_points(p)
    out = cylinder_inside(p, c.a, c.axis_unit, c.h, c.r)
    return bool(out) if single else out


def contains(shape, p):
    if isinstance(shape, Cylinder):
        return contains_cylinder(shape, p)
    return contains_cuboid(shape, p)


# --------------------------------------------------------------------------
# surface sampling


@dataclass(frozen=True, eq=False)
class SurfaceSamples:
    kind: str
    dims: tuple
    local_points: np.ndarray
    region: np.ndarray  # cylinder: 0 lateral, 1 bottom, 2 top; cuboid: face 0..5

    @property
    def n(self) -> int:
        return len(self.local_points)


def _check_dims(kind, dims):
    if kind not in KINDS:
        raise ValueError(f"unknown primitive kind {kind!r}")
    dims = tuple(float(d) for d in dims)
    if kind == CYLINDER:
        if len(dims) != 2 or min(dims) <= 0:
            raise ValueError("cylinder dims are (r, h) with r, h > 0")
    elif len(dims) != 3 or min(dims) <= 0:
        raise ValueError("cuboid dims are three positive half extents")
    return dims


def allocate_counts(n, areas):
    """Largest-remainder split of ``n`` proportional to ``areas``; ties go to
    the lower index."""
    areas = np.asarray(areas, dtype=float)
    quotas = n * areas / areas.sum()
    base = np.floor(quotas).astype(int)
    rest = n - int(base.sum())
    order = np.argsort(-(quotas - base), kind="stable")
    base[order[:rest]] += 1
    return base


def _lattice(m, offset):
    """Rank-1 (Fibonacci) lattice of ``m`` points in the open unit square."""
    i = np.arange(m)
    u = (i + 0.5) / m
    v = np.mod(offset + (i + 0.5) * _GOLDEN, 1.0)
    return u, v


def _mirror_quads(u, v):
    """Orbit of first-quadrant points under both in-plane flips."""
    return np.concatenate([np.column_stack([su * u, sv * v])
                           for su, sv in ((1, 1), (1, -1), (-1, 1), (-1, -1))])


def _disc(m, radius, offset):
    """``m`` flip-symmetric points strictly inside a disc."""
    center = m % 2
    pairs = (m - center) // 2
    quads, axis_pair = divmod(pairs, 2)
    k = quads + axis_pair
    rho = radius * np.sqrt((np.arange(k) + 0.5) / k) if k else np.zeros(0)
    out = []
    if quads:
        theta = 0.5 * math.pi * np.mod(offset + (np.arange(quads) + 0.5) * _GOLDEN, 1.0)
        out.append(_mirror_quads(rho[:quads] * np.cos(theta), rho[:quads] * np.sin(theta)))
    if axis_pair:
        out.append(np.array([[rho[-1], 0.0], [-rho[-1], 0.0]]))
    if center:
        out.append(np.zeros((1, 2)))
    return np.concatenate(out) if out else np.zeros((0, 2))


def _band(m, offset):
    """``m`` points in (-1, 1)^2 symmetric under u -> -u; returns (u, v)."""
    pairs, single = divmod(m, 2)
    k = pairs + single
    v = 2 * (np.arange(k) + 0.5) / k - 1
    u = np.mod(offset + (np.arange(pairs) + 0.5) * _GOLDEN, 1.0)
    out = [np.column_stack([u, v[:pairs]]), np.column_stack([-u, v[:pairs]])]
    if single:
        out.append(np.array([[0.0, v[-1]]]))
    return np.concatenate(out)


def sample_surface(kind, dims, n, seed=0) -> SurfaceSamples:
    """Deterministic, area-weighted stratified samples on a primitive surface.

    ``dims`` is ``(r, h)`` for a cylinder and the three half extents for a
    cuboid.  For ``n > 1`` the sample set is symmetric under flipping either
    local x or local y, which keeps sample placement equivariant under scene
    mirroring.  Per-region counts follow the area split up to the one-point
    moves that symmetry needs; the seed only shifts the lattices.
    """
    dims = _check_dims(kind, dims)
    n = int(n)
    if n < 1:
        raise ValueError("empty sample set")
    offsets = np.random.default_rng(seed).random(6)
    if kind == CYLINDER:
        r, h = dims
        counts = allocate_counts(n, [2 * math.pi * r * h, math.pi * r * r, math.pi * r * r])
        if n == 1:
            pts, labels = np.array([[r, 0.0, h / 2]] if counts[0] else [[0.0, 0.0, 0.0]]), [int(np.argmax(counts))]
            return SurfaceSamples(kind, dims, pts, np.array(labels))
        if counts[0] % 2:
            counts[0] -= 1
            counts[1 if counts[1] <= counts[2] else 2] += 1
        chunks, labels = [], []
        pairs = counts[0] // 2
        quads, axis_pair = divmod(pairs, 2)
        k = quads + axis_pair
        if k:
            z = h * (np.arange(k) + 0.5) / k
            ring = []
            theta = 0.5 * math.pi * np.mod(offsets[0] + (np.arange(quads) + 0.5) * _GOLDEN, 1.0)
            # the axis pair takes the middle ring, quads the rest in order
            slots = [i for i in range(k) if not (axis_pair and i == k // 2)]
            for q, i in enumerate(slots):
                c, s = math.cos(theta[q]), math.sin(theta[q])
                ring += [(r * c, r * s, z[i]), (r * c, -r * s, z[i]),
                         (-r * c, r * s, z[i]), (-r * c, -r * s, z[i])]
            if axis_pair:
                ring += [(r, 0.0, z[k // 2]), (-r, 0.0, z[k // 2])]
            chunks.append(np.array(ring))
            labels.append(np.zeros(len(ring), dtype=int))
        for cap, zc in ((1, 0.0), (2, h)):
            if counts[cap]:
                xy = _disc(counts[cap], r, offsets[cap])
                chunks.append(np.column_stack([xy, np.full(len(xy), zc)]))
                labels.append(np.full(len(xy), cap))
    else:
        e = np.asarray(dims)
        areas = []
        for k in range(3):
            j, l = [i for i in range(3) if i != k]
            areas += [4 * e[j] * e[l]] * 2
        counts = allocate_counts(n, areas)
        if n == 1:
            face = int(np.argmax(counts))
            k, sign = divmod(face, 2)
            pt = np.zeros((1, 3))
            pt[0, k] = e[k] if sign == 0 else -e[k]
            return SurfaceSamples(kind, dims, pt, np.array([face]))
        for k in (0, 1):
            total = counts[2 * k] + counts[2 * k + 1]
            counts[2 * k] = counts[2 * k + 1] = total // 2
            if total % 2:
                counts[4 if counts[4] <= counts[5] else 5] += 1
        chunks, labels = [], []
        for face in range(6):
            m = counts[face]
            if not m:
                continue
            k, sign = divmod(face, 2)
            pts = np.empty((m, 3))
            pts[:, k] = e[k] if sign == 0 else -e[k]
            if k == 2:
                xy = _disc_square(m, offsets[face])
                pts[:, 0], pts[:, 1] = xy[:, 0] * e[0], xy[:, 1] * e[1]
            else:
                # flip acts on the other lateral axis; the segment axis is v
                other = 1 - k
                uv = _band(m, offsets[k])
                pts[:, other], pts[:, 2] = uv[:, 0] * e[other], uv[:, 1] * e[2]
            chunks.append(pts)
            labels.append(np.full(m, face))
    return SurfaceSamples(kind, dims, np.concatenate(chunks), np.concatenate(labels))


def _disc_square(m, offset):
    """``m`` points in (-1, 1)^2 symmetric under both flips."""
    center = m % 2
    pairs = (m - center) // 2
    quads, axis_pair = divmod(pairs, 2)
    out = []
    if quads:
        u, v = _lattice(quads, offset)
        out.append(_mirror_quads(u, v))
    if axis_pair:
        out.append(np.array([[0.5, 0.0], [-0.5, 0.0]]))
    if center:
        out.append(np.zeros((1, 2)))
    return np.concatenate(out)


def surface_distance(kind, dims, p):
    """Signed distance to the surface in the local frame (negative inside)."""
    dims = _check_dims(kind, dims)
    p = np.asarray(p, dtype=float)
    if kind == CYLINDER:
        r, h = dims
        radial = np.hypot(p[..., 0], p[..., 1]) - r
        axial = np.abs(p[..., 2] - h / 2) - h / 2
        d = np.stack([radial, axial], axis=-1)
    else:
        d = np.abs(p) - np.asarray(dims)
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
    return outside + np.minimum(d.max(axis=-1), 0.0)


def antipodal_local(kind, p):
    """Antipodes of local surface points plus a mask of defined entries."""
    p = np.asarray(p, dtype=float)
    q = -p
    if kind == CYLINDER:
        q[..., 2] = p[..., 2]
        ok = np.hypot(p[..., 0], p[..., 1]) >= AXIS_EPS
    else:
        ok = np.ones(p.shape[:-1], dtype=bool)
    return q, ok


def antipodal(kind, dims, p_surface):
    """Reflect a local surface point through the axis (cylinder) or center (cuboid)."""
    dims = _check_dims(kind, dims)
    p, single = _as_points(p_surface)
    if np.any(np.abs(surface_distance(kind, dims, p)) > 1e-6):
        raise ValueError("point is not on the primitive surface")
    q, ok = antipodal_local(kind, p)
    if not np.all(ok):
        raise ValueError("undefined antipodal: point lies on the cylinder axis")
    return q


def depth_local(kind, dims, p):
    """Distance to the nearest surface for local points assumed interior."""
    p = np.asarray(p, dtype=float)
    if kind == CYLINDER:
        r, h = dims[0], dims[1]
        radial = np.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2)
        return np.minimum(r - radial, np.minimum(p[..., 2], h - p[..., 2]))
    e = np.asarray(dims[:3], dtype=float)
    return np.min(e - np.abs(p), axis=-1)


def inside_local(kind, dims, p):
    p = np.asarray(p, dtype=float)
    if kind == CYLINDER:
        return cylinder_inside(p, np.zeros(3), np.array([0.0, 0.0, 1.0]), dims[1], dims[0])
    return cuboid_inside(p, np.zeros(3), np.eye(3), dims)


def penetration_depth(kind, dims, p_interior):
    dims = _check_dims(kind, dims)
    p, single = _as_points(p_interior)
    if not np.all(inside_local(kind, dims, p)):
        raise ValueError("not interior")
    d = depth_local(kind, dims, p)
    return float(d) if single else d


# --------------------------------------------------------------------------
# per-segment proxy parameters


@dataclass
class SegmentProxy:
    kind: str
    r: float = 0.0
    h_scale: float = 1.0
    half_extents: tuple = (0.0, 0.0, 0.0)
    ref_length: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        self.half_extents = tuple(float(x) for x in self.half_extents)
        if self.kind == CYLINDER and not (self.r > 0 and self.h_scale > 0):
            raise ValueError("cylinder proxy needs r > 0 and h_scale > 0")
        if self.kind == CUBOID and (len(self.half_extents) != 3 or min(self.half_extents) <= 0):
            raise ValueError("cuboid proxy needs three positive half extents")

    def dims(self, length):
        """Local dims for a segment of the given length."""
        if self.kind == CYLINDER:
            return (self.r, self.h_scale * length)
        return self.half_extents

    def scaled(self, s):
        ref = None if self.ref_length is None else self.ref_length * s
        return SegmentProxy(self.kind, self.r * s, self.h_scale,
                            tuple(x * s for x in self.half_extents), ref)

    def to_dict(self):
        if self.kind == CYLINDER:
            d = {"kind": CYLINDER, "r": self.r, "h_scale": self.h_scale}
        else:
            d = {"kind": CUBOID, "half_extents": list(self.half_extents)}
        if self.ref_length is not None:
            d["ref_length"] = self.ref_length
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind")
        allowed = {"kind", "ref_length"} | ({"r", "h_scale"} if kind == CYLINDER else {"half_extents"})
        extra = set(d) - allowed
        if extra:
            raise ValueError(f"unknown proxy key(s): {sorted(extra)}")
        if kind == CYLINDER:
            return cls(CYLINDER, r=float(d["r"]), h_scale=float(d.get("h_scale", 1.0)),
                       ref_length=d.get("ref_length"))
        if kind == CUBOID:
            return cls(CUBOID, half_extents=tuple(d["half_extents"]),
                       ref_length=d.get("ref_length"))
        raise ValueError(f"unknown primitive kind {kind!r}")


@dataclass
class ProxyParams:
    segments: list
    sample_counts: dict = field(default_factory=lambda: dict(DEFAULT_SAMPLE_COUNTS))

    def __len__(self):
        return len(self.segments)

    def scaled(self, s):
        return ProxyParams([p.scaled(s) for p in self.segments], dict(self.sample_counts))

    def to_dict(self):
        return {"schema": "proxycoll/1",
                "sample_counts": dict(self.sample_counts),
                "segments": [p.to_dict() for p in self.segments]}

    @classmethod
    def from_dict(cls, d):
        counts = dict(DEFAULT_SAMPLE_COUNTS)
        counts.update(d.get("sample_counts", {}))
        for k in counts:
            if k not in KINDS:
                raise ValueError(f"unknown primitive kind {k!r} in sample_counts")
        return cls([SegmentProxy.from_dict(s) for s in d["segments"]], counts)


def load_proxy_params(path) -> ProxyParams:
    return ProxyParams.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_proxy_params(params: ProxyParams, path):
    Path(path).write_text(json.dumps(params.to_dict(), indent=2), encoding="utf-8")
