"""Articulated body model, motion files and rigid placement of proxies."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .primitives import (CUBOID, CYLINDER, KINDS, Cuboid, Cylinder, ProxyParams,
                         SegmentProxy, sample_surface)

log = logging.getLogger(__name__)

#: Segments shorter than this are flagged degenerate.
LENGTH_EPS = 1e-9
MOTION_MAGIC = b"PCMO"
_EYE = np.eye(3)


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int | None


@dataclass(frozen=True)
class Segment:
    name: str
    joint_a: int
    joint_b: int
    primitive_kind: str
    #: optional (left, right) joint pair fixing the lateral axis of a cuboid
    lateral: tuple | None = None


@dataclass(frozen=True)
class Skeleton:
    joints: tuple
    segments: tuple

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "segments", tuple(self.segments))
        _validate_skeleton(self)

    @property
    def n_joints(self):
        return len(self.joints)

    @property
    def n_segments(self):
        return len(self.segments)

    @property
    def parents(self):
        return [j.parent for j in self.joints]

    def bones(self):
        """Parent->child joint pairs of the tree, as an (n_joints - 1, 2) array."""
        pairs = [(j.parent, i) for i, j in enumerate(self.joints) if j.parent is not None]
        return np.array(pairs, dtype=int).reshape(-1, 2)

    def to_dict(self):
        segs = []
        for s in self.segments:
            d = {"name": s.name, "joint_a": s.joint_a, "joint_b": s.joint_b,
                 "primitive": s.primitive_kind}
            if s.lateral is not None:
                d["lateral"] = list(s.lateral)
            segs.append(d)
        return {"joints": [{"name": j.name, "parent": j.parent} for j in self.joints],
                "segments": segs}

    def with_kind(self, kind):
        """Copy with every segment switched to one primitive kind."""
        segs = [Segment(s.name, s.joint_a, s.joint_b, kind, s.lateral) for s in self.segments]
        return Skeleton(self.joints, segs)


def _validate_skeleton(skel: Skeleton):
    n = len(skel.joints)
    if n == 0:
        raise ValueError("skeleton has no joints")
    roots = [i for i, j in enumerate(skel.joints) if j.parent is None]
    for i, j in enumerate(skel.joints):
        if j.parent is not None and not (0 <= j.parent < n):
            raise ValueError(f"joint {j.name!r} references missing parent {j.parent}")
    for i in range(n):
        seen, k = set(), i
        while k is not None:
            if k in seen:
                raise ValueError(f"cycle in parent links at joint {skel.joints[i].name!r}")
            seen.add(k)
            k = skel.joints[k].parent
    if len(roots) != 1:
        raise ValueError(f"skeleton must have exactly one root, found {len(roots)}")
    for s in skel.segments:
        for idx in (s.joint_a, s.joint_b) + tuple(s.lateral or ()):
            if not (isinstance(idx, (int, np.integer)) and 0 <= idx < n):
                raise ValueError(f"segment {s.name!r} references missing joint {idx}")
        if s.joint_a == s.joint_b:
            raise ValueError(f"segment {s.name!r} joins joint {s.joint_a} to itself")
        if s.primitive_kind not in KINDS:
            raise ValueError(f"unknown primitive kind {s.primitive_kind!r}")
        if s.lateral is not None and len(s.lateral) != 2:
            raise ValueError(f"segment {s.name!r}: lateral must name two joints")


def load_skeleton(document) -> Skeleton:
    """Build a Skeleton from a parsed document, a JSON string or a path."""
    if isinstance(document, (str, Path)) and not str(document).lstrip().startswith("{"):
        document = json.loads(Path(document).read_text(encoding="utf-8"))
    elif isinstance(document, str):
        document = json.loads(document)
    extra = set(document) - {"joints", "segments", "name"}
    if extra:
        raise ValueError(f"unknown skeleton key(s): {sorted(extra)}")
    joints = [Joint(str(j["name"]), None if j.get("parent") is None else int(j["parent"]))
              for j in document["joints"]]
    segs = []
    for s in document["segments"]:
        lat = s.get("lateral")
        segs.append(Segment(str(s["name"]), int(s["joint_a"]), int(s["joint_b"]),
                            s.get("primitive", CYLINDER),
                            None if lat is None else tuple(int(x) for x in lat)))
    return Skeleton(joints, segs)


# 22-joint body in the common mocap ordering (pelvis first, wrists last).
_JOINTS_22 = [
    ("pelvis", None), ("left_hip", 0), ("right_hip", 0), ("spine1", 0),
    ("left_knee", 1), ("right_knee", 2), ("spine2", 3), ("left_ankle", 4),
    ("right_ankle", 5), ("spine3", 6), ("left_foot", 7), ("right_foot", 8),
    ("neck", 9), ("left_collar", 9), ("right_collar", 9), ("head", 12),
    ("left_shoulder", 13), ("right_shoulder", 14), ("left_elbow", 16),
    ("right_elbow", 17), ("left_wrist", 18), ("right_wrist", 19),
]

# Our reconstruction of a 19-primitive body; torso boxes take their lateral
# axis from the two hips.
_SEGMENTS_19 = [
    ("pelvis_left", 0, 1, CYLINDER), ("pelvis_right", 0, 2, CYLINDER),
    ("torso_lower", 0, 3, CUBOID), ("torso_mid", 3, 6, CUBOID), ("torso_upper", 6, 9, CUBOID),
    ("neck", 9, 12, CYLINDER), ("head", 12, 15, CYLINDER),
    ("left_thigh", 1, 4, CYLINDER), ("right_thigh", 2, 5, CYLINDER),
    ("left_shin", 4, 7, CYLINDER), ("right_shin", 5, 8, CYLINDER),
    ("left_foot", 7, 10, CYLINDER), ("right_foot", 8, 11, CYLINDER),
    ("left_clavicle", 13, 16, CYLINDER), ("right_clavicle", 14, 17, CYLINDER),
    ("left_upper_arm", 16, 18, CYLINDER), ("right_upper_arm", 17, 19, CYLINDER),
    ("left_forearm", 18, 20, CYLINDER), ("right_forearm", 19, 21, CYLINDER),
]

_REST_22 = np.array([
    [0.00, 0.00, 0.95], [0.09, 0.00, 0.88], [-0.09, 0.00, 0.88], [0.00, 0.00, 1.05],
    [0.10, 0.00, 0.50], [-0.10, 0.00, 0.50], [0.00, 0.00, 1.18], [0.10, 0.00, 0.08],
    [-0.10, 0.00, 0.08], [0.00, 0.00, 1.30], [0.10, 0.12, 0.02], [-0.10, 0.12, 0.02],
    [0.00, 0.00, 1.50], [0.07, 0.00, 1.42], [-0.07, 0.00, 1.42], [0.00, 0.00, 1.65],
    [0.18, 0.00, 1.42], [-0.18, 0.00, 1.42], [0.45, 0.00, 1.42], [-0.45, 0.00, 1.42],
    [0.70, 0.00, 1.42], [-0.70, 0.00, 1.42],
])

_DEFAULT_DIMS = {
    "pelvis_left": 0.08, "pelvis_right": 0.08, "neck": 0.05, "head": 0.09,
    "left_thigh": 0.08, "right_thigh": 0.08, "left_shin": 0.055, "right_shin": 0.055,
    "left_foot": 0.04, "right_foot": 0.04, "left_clavicle": 0.05, "right_clavicle": 0.05,
    "left_upper_arm": 0.045, "right_upper_arm": 0.045, "left_forearm": 0.038,
    "right_forearm": 0.038, "torso_lower": 0.13, "torso_mid": 0.13, "torso_upper": 0.13,
}


def default_skeleton(kind="mixed") -> Skeleton:
    """22 joints, 19 segments.  ``kind`` is ``"mixed"`` (cuboid torso,
    cylinder limbs), ``"cylinder"`` or ``"cuboid"``."""
    joints = [Joint(n, p) for n, p in _JOINTS_22]
    segs = []
    for name, a, b, k in _SEGMENTS_19:
        if kind in KINDS:
            k = kind
        elif kind != "mixed":
            raise ValueError(f"unknown skeleton kind {kind!r}")
        segs.append(Segment(name, a, b, k, (1, 2) if name.startswith("torso") else None))
    return Skeleton(joints, segs)


def default_rest_pose() -> np.ndarray:
    """T-pose for :func:`default_skeleton`, z up, facing +y, meters."""
    return _REST_22.copy()


def default_proxy_params(skeleton: Skeleton, scale=1.0) -> ProxyParams:
    """Hand-set proxy sizes for the default body (used before any fitting)."""
    out = []
    for s in skeleton.segments:
        r = _DEFAULT_DIMS.get(s.name, 0.05) * scale
        if s.primitive_kind == CYLINDER:
            out.append(SegmentProxy(CYLINDER, r=r, h_scale=1.3 if s.name == "head" else 1.0))
        elif s.name.startswith("torso"):
            out.append(SegmentProxy(CUBOID, half_extents=(0.15 * scale, 0.10 * scale, 0.07 * scale)))
        else:
            out.append(SegmentProxy(CUBOID, half_extents=(r, r, 0.5 * r)))
    return ProxyParams(out)


# --------------------------------------------------------------------------
# motion sequences


@dataclass
class MotionSequence:
    positions: np.ndarray  # (frames, 2, joints, 3), meters

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float)
        if p.ndim != 4 or p.shape[1] != 2 or p.shape[3] != 3:
            raise ValueError(f"motion must be frames x 2 x joints x 3, got {p.shape}")
        if p.shape[0] < 1:
            raise ValueError("motion needs at least one frame")
        if not np.all(np.isfinite(p)):
            raise ValueError("motion contains non-finite coordinates")
        self.positions = p

    @property
    def frame_count(self):
        return self.positions.shape[0]

    @property
    def person_count(self):
        return 2

    @property
    def joint_count(self):
        return self.positions.shape[2]

    def check(self, skeleton: Skeleton):
        if self.joint_count != skeleton.n_joints:
            raise ValueError(f"motion has {self.joint_count} joints, skeleton has "
                             f"{skeleton.n_joints}")

    def to_dict(self):
        f, _, n, _ = self.positions.shape
        return {"persons": 2, "frames": f, "joints": n,
                "positions": self.positions.ravel().tolist()}


def load_motion(path) -> MotionSequence:
    """Read a JSON or PCMO binary motion file."""
    raw = Path(path).read_bytes()
    if raw[:4] == MOTION_MAGIC:
        if len(raw) < 16:
            raise ValueError("truncated motion header")
        frames, joints, persons = struct.unpack("<III", raw[4:16])
        if persons != 2:
            raise ValueError(f"motion must have 2 persons, header says {persons}")
        count = frames * persons * joints * 3
        if len(raw) != 16 + 8 * count:
            raise ValueError("binary motion payload size does not match its header")
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=16)
        return MotionSequence(data.reshape(frames, persons, joints, 3).copy())
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc
    if doc.get("persons", 2) != 2:
        raise ValueError("motion must have 2 persons")
    data = np.asarray(doc["positions"], dtype=float)
    shape = (int(doc["frames"]), 2, int(doc["joints"]), 3)
    if data.size != np.prod(shape):
        raise ValueError(f"positions has {data.size} values, header implies {np.prod(shape)}")
    return MotionSequence(data.reshape(shape))


def save_motion(motion: MotionSequence, path, binary=None):
    path = Path(path)
    if binary is None:
        binary = path.suffix.lower() in (".bin", ".pcmo")
    if binary:
        f, p, n, _ = motion.positions.shape
        header = MOTION_MAGIC + struct.pack("<III", f, n, p)
        path.write_bytes(header + motion.positions.astype("<f8").tobytes())
    else:
        path.write_text(json.dumps(motion.to_dict()), encoding="utf-8")


# --------------------------------------------------------------------------
# segment frames


@dataclass(frozen=True, eq=False)
class SegmentFrame:
    origin: np.ndarray
    axis: np.ndarray
    length: float
    orientation_basis: np.ndarray
    degenerate: bool = False


def _reference_joints(skeleton: Skeleton):
    """Per segment (plus, minus) joints whose difference fixes the lateral
    axis, or (-1, -1) for the world-axis rule."""
    ref = np.full((skeleton.n_segments, 2), -1, dtype=int)
    for i, s in enumerate(skeleton.segments):
        if s.primitive_kind != CUBOID:
            continue
        if s.lateral is not None:
            ref[i] = (s.lateral[1], s.lateral[0])
        else:
            parent = skeleton.joints[s.joint_a].parent
            if parent is not None:
                ref[i] = (parent, s.joint_a)
    return ref


def _body_frame_joints(skeleton: Skeleton):
    """(axis_a, axis_b, lateral_minus, lateral_plus) of the first segment
    carrying a lateral pair, or None."""
    for s in skeleton.segments:
        if s.lateral is not None:
            return np.array([s.joint_a, s.joint_b, s.lateral[0], s.lateral[1]])
    return None


def _body_axes(bf, joints):
    """Body-fixed candidate axes (columns up, lateral, forward) per batch item.

    Falls back to the world axes where the body frame is degenerate or the
    skeleton has none.  Returns ``(axes, ok, t, tn, r, sn)``; the last four are
    only meaningful where ``ok``.
    """
    shape = joints.shape[:-2]
    if bf is None:
        eye = np.broadcast_to(_EYE, shape + (3, 3))
        z = np.zeros(shape + (3,))
        return eye, np.zeros(shape, dtype=bool), z, np.ones(shape), z, np.ones(shape)
    t = joints[..., bf[1], :] - joints[..., bf[0], :]
    tn = np.linalg.norm(t, axis=-1)
    up = t / np.where(tn > LENGTH_EPS, tn, 1.0)[..., None]
    r = joints[..., bf[3], :] - joints[..., bf[2], :]
    s = r - np.sum(r * up, axis=-1, keepdims=True) * up
    sn = np.linalg.norm(s, axis=-1)
    ok = (tn > LENGTH_EPS) & (sn > 1e-9)
    lat = s / np.where(ok, sn, 1.0)[..., None]
    fwd = np.cross(up, lat)
    axes = np.where(ok[..., None, None], np.stack([up, lat, fwd], axis=-1), _EYE)
    return axes, ok, t, np.where(ok, tn, 1.0), r, np.where(ok, sn, 1.0)


def _lateral_axis(u, ref, use_ref, axes):
    """First basis column.  ``ref`` wins when usable, otherwise ``u x w``
    with ``w`` the candidate axis least aligned with ``u``."""
    align = np.abs(np.einsum("...i,...ik->...k", u, axes))
    # near-ties go to the lower index so rounding noise cannot flip the choice
    k = np.argmax(align <= align.min(axis=-1, keepdims=True) + 1e-9, axis=-1)
    w = np.take_along_axis(axes, k[..., None, None], axis=-1)[..., 0]
    c = np.cross(u, w)
    s = ref - np.sum(ref * u, axis=-1, keepdims=True) * u
    sn = np.linalg.norm(s, axis=-1)
    use = use_ref & (sn > 1e-9)
    v = np.where(use[..., None], s, c)
    vn = np.linalg.norm(v, axis=-1)
    return v / vn[..., None], w, k, use, vn


def frame_arrays(skeleton: Skeleton, joints):
    """Batched segment frames for joints of shape (..., n_joints, 3).

    Returns origin (joint_a), unit axis, length, basis (columns x, y, axis) and
    the degenerate mask, each with the leading batch shape plus the segment
    axis.
    """
    joints = np.asarray(joints, dtype=float)
    ia = np.array([s.joint_a for s in skeleton.segments])
    ib = np.array([s.joint_b for s in skeleton.segments])
    ref_idx = _reference_joints(skeleton)
    a = joints[..., ia, :]
    e = joints[..., ib, :] - a
    length = np.linalg.norm(e, axis=-1)
    degenerate = length < LENGTH_EPS
    u = np.where(degenerate[..., None], _EYE[2], e / np.where(degenerate, 1.0, length)[..., None])
    has_ref = ref_idx[:, 0] >= 0
    ref = joints[..., np.maximum(ref_idx[:, 0], 0), :] - joints[..., np.maximum(ref_idx[:, 1], 0), :]
    axes, _, _, _, _, _ = _body_axes(_body_frame_joints(skeleton), joints)
    axes = np.broadcast_to(axes[..., None, :, :], u.shape + (3,))
    x, _, _, _, _ = _lateral_axis(u, ref, np.broadcast_to(has_ref, u.shape[:-1]), axes)
    y = np.cross(u, x)
    basis = np.stack([x, y, u], axis=-1)
    basis = np.where(degenerate[..., None, None], _EYE, basis)
    return a, u, length, basis, degenerate


def segment_frames(skeleton: Skeleton, frame_joints) -> list:
    frame_joints = np.asarray(frame_joints, dtype=float)
    if frame_joints.shape != (skeleton.n_joints, 3):
        raise ValueError(f"expected ({skeleton.n_joints}, 3) joint positions")
    if not np.all(np.isfinite(frame_joints)):
        raise ValueError("joint positions must be finite")
    a, u, length, basis, deg = frame_arrays(skeleton, frame_joints)
    return [SegmentFrame(a[i], u[i], float(length[i]), basis[i], bool(deg[i]))
            for i in range(skeleton.n_segments)]


# --------------------------------------------------------------------------
# placement


@dataclass(frozen=True, eq=False)
class PosedPrimitive:
    segment: int
    kind: str
    origin: np.ndarray   # cylinder bottom center / cuboid center
    basis: np.ndarray    # columns x, y, axis
    dims: tuple          # (r, h) or half extents

    @property
    def shape(self):
        if self.kind == CYLINDER:
            return Cylinder(self.origin, self.basis[:, 2], self.dims[1], self.dims[0])
        return Cuboid(self.origin, self.basis, self.dims)

    def to_world(self, local):
        return self.origin + np.asarray(local) @ self.basis.T

    def to_local(self, world):
        return (np.asarray(world) - self.origin) @ self.basis


def place_proxies(params: ProxyParams, frames: list):
    """Attach one primitive per non-degenerate segment frame.

    Returns ``(primitives, warnings)``; degenerate segments are left out and
    named in ``warnings``.
    """
    if len(params) != len(frames):
        raise ValueError(f"{len(params)} proxies for {len(frames)} segments")
    out, warnings = [], []
    for i, (p, f) in enumerate(zip(params.segments, frames)):
        if f.degenerate:
            warnings.append(f"segment {i} is degenerate; primitive omitted")
            continue
        if p.kind == CYLINDER:
            out.append(PosedPrimitive(i, CYLINDER, f.origin.copy(), f.orientation_basis,
                                      (p.r, p.h_scale * f.length)))
        else:
            mid = f.origin + 0.5 * f.length * f.axis
            out.append(PosedPrimitive(i, CUBOID, mid, f.orientation_basis, p.half_extents))
    for w in warnings:
        log.warning(w)
    return out, warnings


# --------------------------------------------------------------------------
# batched bodies


@dataclass
class PosedBatch:
    """One person posed over ``F`` frames, with world-frame surface samples."""
    model: "BodyModel"
    joints: np.ndarray      # (F, N, 3)
    origins: np.ndarray     # (F, M, 3)
    bases: np.ndarray       # (F, M, 3, 3)
    lengths: np.ndarray     # (F, M)
    dims: np.ndarray        # (F, M, 3); cylinder (r, h, 0)
    valid: np.ndarray       # (F, M)
    samples: np.ndarray     # (F, S, 3)
    sample_local: np.ndarray  # (F, S, 3) in the current local frame

    @property
    def frames(self):
        return self.origins.shape[0]

    def sphere(self):
        """Bounding sphere (center, radius) per primitive and frame."""
        cyl = self.model.is_cylinder
        half_h = 0.5 * self.dims[..., 1]
        c_cyl = self.origins + half_h[..., None] * self.bases[..., :, 2]
        center = np.where(cyl[None, :, None], c_cyl, self.origins)
        rad = np.where(cyl[None, :], np.hypot(self.dims[..., 0], half_h),
                       np.linalg.norm(self.dims, axis=-1))
        return center, rad

    def primitive(self, frame, seg) -> PosedPrimitive:
        kind = self.model.kinds[seg]
        d = self.dims[frame, seg]
        dims = (d[0], d[1]) if kind == CYLINDER else tuple(d)
        return PosedPrimitive(seg, kind, self.origins[frame, seg], self.bases[frame, seg], dims)

    def frame(self, f) -> "PosedBatch":
        s = slice(f, f + 1)
        return PosedBatch(self.model, self.joints[s], self.origins[s], self.bases[s],
                          self.lengths[s], self.dims[s], self.valid[s], self.samples[s],
                          self.sample_local[s])


class BodyModel:
    """Skeleton + proxy sizes + fixed surface-sample templates for one person.

    Cylinder templates are built at ``h = h_scale * ref_length`` and stored
    with their height as a fraction of ``h`` so that samples slide with the
    segment when it stretches.
    """

    def __init__(self, skeleton: Skeleton, params: ProxyParams, ref_lengths=None,
                 sample_counts=None, seed=0):
        if len(params) != skeleton.n_segments:
            raise ValueError(f"{len(params)} proxies for {skeleton.n_segments} segments")
        for s, p in zip(skeleton.segments, params.segments):
            if s.primitive_kind != p.kind:
                raise ValueError(f"segment {s.name!r} is a {s.primitive_kind}, proxy is a {p.kind}")
        self.skeleton = skeleton
        self.params = params
        self.seed = seed
        counts = dict(params.sample_counts)
        counts.update(sample_counts or {})
        self.sample_counts = counts
        self.kinds = [p.kind for p in params.segments]
        self.is_cylinder = np.array([k == CYLINDER for k in self.kinds])
        self.seg_a = np.array([s.joint_a for s in skeleton.segments])
        self.seg_b = np.array([s.joint_b for s in skeleton.segments])
        self.ref_joints = _reference_joints(skeleton)
        self.body_frame = _body_frame_joints(skeleton)

        self.templates = []
        locs, segs, idxs = [], [], []
        for j, p in enumerate(params.segments):
            ref = p.ref_length
            if ref is None and ref_lengths is not None:
                ref = float(ref_lengths[j])
            if not ref or ref <= LENGTH_EPS:
                ref = 1.0
            dims = p.dims(ref)
            t = sample_surface(p.kind, dims, counts[p.kind], seed=seed + j)
            self.templates.append(t)
            loc = t.local_points.copy()
            if p.kind == CYLINDER:
                loc[:, 2] = loc[:, 2] / dims[1]  # axial fraction of h
            locs.append(loc)
            segs.append(np.full(t.n, j))
            idxs.append(np.arange(t.n))
        self.template_local = np.concatenate(locs)
        self.sample_seg = np.concatenate(segs)
        self.sample_idx = np.concatenate(idxs)
        # static per-primitive dims; cylinder height is filled per pose
        self.r_or_e = np.array([[p.r, 0.0, 0.0] if p.kind == CYLINDER else p.half_extents
                                for p in params.segments], dtype=float)
        self.h_scale = np.array([p.h_scale if p.kind == CYLINDER else 0.0
                                 for p in params.segments])

    @property
    def n_samples(self):
        return len(self.sample_seg)

    def subset(self, sample_mask):
        """Shallow copy restricted to a subset of the sample templates."""
        other = object.__new__(BodyModel)
        other.__dict__.update(self.__dict__)
        other.template_local = self.template_local[sample_mask]
        other.sample_seg = self.sample_seg[sample_mask]
        other.sample_idx = self.sample_idx[sample_mask]
        return other

    def pose(self, joints) -> PosedBatch:
        joints = np.asarray(joints, dtype=float)
        if joints.ndim == 2:
            joints = joints[None]
        if joints.shape[1:] != (self.skeleton.n_joints, 3):
            raise ValueError(f"expected (F, {self.skeleton.n_joints}, 3) joints, got {joints.shape}")
        a, u, length, basis, deg = frame_arrays(self.skeleton, joints)
        cyl = self.is_cylinder
        origins = np.where(cyl[None, :, None], a, a + 0.5 * length[..., None] * u)
        dims = np.broadcast_to(self.r_or_e, length.shape + (3,)).copy()
        dims[..., 1] = np.where(cyl[None, :], self.h_scale * length, dims[..., 1])
        valid = ~deg

        n_frames = joints.shape[0]
        loc = np.empty((n_frames,) + self.template_local.shape)
        world = np.empty_like(loc)
        for j, lo, hi in self._slices:
            tpl = self.template_local[lo:hi]
            if cyl[j]:
                loc[:, lo:hi, :2] = tpl[:, :2]
                loc[:, lo:hi, 2] = tpl[:, 2] * dims[:, j, 1:2]
            else:
                loc[:, lo:hi] = tpl
            world[:, lo:hi] = origins[:, j, None, :] + np.matmul(loc[:, lo:hi],
                                                                 basis[:, j].transpose(0, 2, 1))
        return PosedBatch(self, joints, origins, basis, length, dims, valid, world, loc)

    @property
    def _slices(self):
        """(segment, start, stop) runs of the sample arrays, which are
        grouped by segment."""
        seg = self.sample_seg
        if len(seg) == 0:
            return []
        cuts = np.flatnonzero(np.diff(seg)) + 1
        starts = np.concatenate([[0], cuts])
        stops = np.concatenate([cuts, [len(seg)]])
        return [(int(seg[a]), int(a), int(b)) for a, b in zip(starts, stops)]

    def sample_vjp(self, joints, frame, sample, grad):
        """Pull per-sample gradients back to joint positions.

        ``frame`` and ``sample`` index (F, S) entries of a pose of ``joints``;
        ``grad`` is (K, 3).  Returns the (F, N, 3) joint gradient.  Samples on
        degenerate segments contribute nothing.
        """
        joints = np.asarray(joints, dtype=float)
        out = np.zeros_like(joints)
        if len(frame) == 0:
            return out
        g = np.asarray(grad, dtype=float)
        seg = self.sample_seg[sample]
        loc = self.template_local[sample]
        ia, ib = self.seg_a[seg], self.seg_b[seg]
        A = joints[frame, ia]
        e = joints[frame, ib] - A
        L = np.linalg.norm(e, axis=-1)
        ok = L >= LENGTH_EPS
        Ls = np.where(ok, L, 1.0)
        u = e / Ls[:, None]
        rj = self.ref_joints[seg]
        has_ref = rj[:, 0] >= 0
        ref = joints[frame, np.maximum(rj[:, 0], 0)] - joints[frame, np.maximum(rj[:, 1], 0)]
        axes, bok, bt, btn, br, bsn = _body_axes(self.body_frame, joints)
        x, w, k, use, vn = _lateral_axis(u, ref, has_ref, axes[frame])
        cyl = self.is_cylinder[seg]

        l0, l1, l2 = loc[:, 0:1], loc[:, 1:2], loc[:, 2:3]
        grad_x = l0 * g + l1 * np.cross(g, u)
        grad_u = l1 * np.cross(x, g) + np.where(cyl[:, None], 0.0, l2 * g)
        grad_v = (grad_x - x * np.sum(x * grad_x, axis=-1, keepdims=True)) / vn[:, None]
        ug = np.sum(u * grad_v, axis=-1, keepdims=True)
        grad_r = np.where(use[:, None], grad_v - u * ug, 0.0)
        grad_u += np.where(use[:, None],
                           -ug * ref - np.sum(ref * u, axis=-1, keepdims=True) * grad_v,
                           np.cross(w, grad_v))
        grad_e = (grad_u - u * np.sum(u * grad_u, axis=-1, keepdims=True)) / Ls[:, None]

        # candidate axis w = body axis k, itself a function of four joints
        body = (~use) & bok[frame] & ok
        grad_w = np.where(body[:, None], np.cross(grad_v, u), 0.0)
        up, lat = axes[frame, :, 0], axes[frame, :, 1]
        g_up = grad_w * (k == 0)[:, None]
        g_lat = grad_w * (k == 1)[:, None] + np.cross(grad_w * (k == 2)[:, None], up)
        g_up += np.cross(lat, grad_w * (k == 2)[:, None])
        g_s = (g_lat - lat * np.sum(lat * g_lat, axis=-1, keepdims=True)) / bsn[frame][:, None]
        bref = br[frame]
        g_br = g_s - up * np.sum(up * g_s, axis=-1, keepdims=True)
        g_up += (-np.sum(up * g_s, axis=-1, keepdims=True) * bref
                 - np.sum(bref * up, axis=-1, keepdims=True) * g_s)
        g_bt = (g_up - up * np.sum(up * g_up, axis=-1, keepdims=True)) / btn[frame][:, None]

        tau = np.where(cyl, loc[:, 2] * self.h_scale[seg], 0.5)[:, None]
        ga = (1.0 - tau) * g - grad_e
        gb = tau * g + grad_e
        mask = ok[:, None]
        ga, gb, grad_r = ga * mask, gb * mask, grad_r * mask

        n = joints.shape[1]
        flat = out.reshape(-1, 3)
        np.add.at(flat, frame * n + ia, ga)
        np.add.at(flat, frame * n + ib, gb)
        sel = has_ref
        np.add.at(flat, frame[sel] * n + rj[sel, 0], grad_r[sel])
        np.add.at(flat, frame[sel] * n + rj[sel, 1], -grad_r[sel])
        if self.body_frame is not None:
            bf = self.body_frame
            np.add.at(flat, frame * n + bf[1], g_bt)
            np.add.at(flat, frame * n + bf[0], -g_bt)
            np.add.at(flat, frame * n + bf[3], g_br)
            np.add.at(flat, frame * n + bf[2], -g_br)
        return out
