"""Synthetic bodies and two-person scenes with known ground truth.

The capsule body is a small all-cylinder skeleton wrapped in capsule meshes
with known radii, used to check proxy fitting.  The interpenetration suite
holds a handful of two-person motions built on the default skeleton, each
with a deliberate overlap that the resolver should remove.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fitting import point_segment_distance
from .mesh import TriangleMesh, capsule_mesh, concatenate, cylinder_mesh
from .primitives import CYLINDER, ProxyParams, SegmentProxy
from .skeleton import (Joint, MotionSequence, Segment, Skeleton, default_proxy_params,
                       default_rest_pose, default_skeleton)

# --------------------------------------------------------------------------
# capsule body for fitting

# Shoulders and hips sit clear of the torso capsule so that nearest-segment
# region assignment separates the limbs from the trunk; elbows and knees are
# shared chain joints.
_CAPSULE_JOINTS = [
    ("pelvis", None, (0.00, 0.00, 1.00)), ("chest", 0, (0.00, 0.01, 1.50)),
    ("neck", 1, (0.00, 0.01, 1.76)), ("head_top", 2, (0.00, 0.02, 2.18)),
    ("l_shoulder", 1, (0.28, 0.01, 1.44)), ("l_elbow", 4, (0.56, 0.03, 1.40)),
    ("l_wrist", 5, (0.83, 0.06, 1.34)),
    ("r_shoulder", 1, (-0.28, 0.01, 1.44)), ("r_elbow", 7, (-0.56, 0.03, 1.40)),
    ("r_wrist", 8, (-0.83, 0.06, 1.34)),
    ("l_hip", 0, (0.16, 0.00, 0.78)), ("l_knee", 10, (0.17, 0.03, 0.42)),
    ("l_ankle", 11, (0.18, 0.00, 0.02)),
    ("r_hip", 0, (-0.16, 0.00, 0.78)), ("r_knee", 13, (-0.17, 0.03, 0.42)),
    ("r_ankle", 14, (-0.18, 0.00, 0.02)),
]

CAPSULE_RADII = {
    "torso": 0.12, "head": 0.09, "l_upper_arm": 0.04, "l_forearm": 0.03,
    "r_upper_arm": 0.04, "r_forearm": 0.03, "l_thigh": 0.07, "l_shin": 0.05,
    "r_thigh": 0.07, "r_shin": 0.05,
}

_CAPSULE_SEGMENTS = [
    ("torso", 0, 1), ("head", 2, 3), ("l_upper_arm", 4, 5), ("l_forearm", 5, 6),
    ("r_upper_arm", 7, 8), ("r_forearm", 8, 9), ("l_thigh", 10, 11), ("l_shin", 11, 12),
    ("r_thigh", 13, 14), ("r_shin", 14, 15),
]


def capsule_skeleton() -> Skeleton:
    joints = [Joint(n, p) for n, p, _ in _CAPSULE_JOINTS]
    return Skeleton(joints, [Segment(n, a, b, CYLINDER) for n, a, b in _CAPSULE_SEGMENTS])


def capsule_rest_pose() -> np.ndarray:
    return np.array([x for _, _, x in _CAPSULE_JOINTS], dtype=float)


def capsule_body(radii=None, trim=False, density=1.0):
    """Union of capsule meshes around the capsule skeleton.

    Returns ``(mesh, labels)`` where ``labels[v]`` is the generating segment
    of vertex ``v``.  By default every capsule stays closed, so the union is
    watertight.  With ``trim`` the vertices buried inside another capsule are
    dropped (with every face touching them), leaving only the outer skin.
    """
    radii = {**CAPSULE_RADII, **(radii or {})}
    pose = capsule_rest_pose()
    parts, labels = [], []
    for j, (name, a, b) in enumerate(_CAPSULE_SEGMENTS):
        r = radii[name]
        length = np.linalg.norm(pose[b] - pose[a])
        n_theta = max(16, int(round(density * 2 * np.pi * r / 0.006)))
        n_z = max(4, int(round(density * length / 0.006)))
        n_cap = max(4, int(round(density * 0.5 * np.pi * r / 0.006)))
        m = capsule_mesh(pose[a], pose[b], r, n_theta=n_theta, n_cap=n_cap, n_z=n_z)
        parts.append(m)
        labels.append(np.full(len(m.vertices), j))
    mesh = concatenate(parts)
    labels = np.concatenate(labels)
    if not trim:
        return mesh, labels
    keep = np.ones(len(mesh.vertices), dtype=bool)
    for j, (name, a, b) in enumerate(_CAPSULE_SEGMENTS):
        d = point_segment_distance(mesh.vertices, pose[a][None], pose[b][None])[:, 0]
        keep &= ~((d < radii[name] - 1e-9) & (labels != j))
    remap = np.cumsum(keep) - 1
    faces = mesh.faces[np.all(keep[mesh.faces], axis=1)]
    return TriangleMesh(mesh.vertices[keep], remap[faces]), labels[keep]


def capsule_proxies(radii=None) -> ProxyParams:
    """Exact-shape cylinder proxies for the capsule body (caps not modeled)."""
    radii = {**CAPSULE_RADII, **(radii or {})}
    return ProxyParams([SegmentProxy(CYLINDER, r=radii[n], h_scale=1.0) for n, _, _ in _CAPSULE_SEGMENTS])


def cylinder_body(radii=None, pose=None):
    """Closed cylinder meshes matching :func:`capsule_proxies` exactly."""
    radii = {**CAPSULE_RADII, **(radii or {})}
    pose = capsule_rest_pose() if pose is None else np.asarray(pose, dtype=float)
    parts = []
    for name, a, b in _CAPSULE_SEGMENTS:
        r = radii[name]
        n_theta = max(48, int(round(2 * np.pi * r / 0.003)))
        parts.append(cylinder_mesh(pose[a], pose[b], r, n_theta=n_theta, n_z=2))
    return concatenate(parts)


# --------------------------------------------------------------------------
# two-person interpenetration scenes on the default skeleton

@dataclass(eq=False)
class Scene:
    name: str
    motion: MotionSequence
    skeleton: Skeleton
    params: tuple
    description: str = ""


def rot_z(deg):
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_x(deg):
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def place(pose, yaw_deg=0.0, offset=(0.0, 0.0, 0.0)):
    """Rotate a pose about the vertical axis through the origin, then shift."""
    return np.asarray(pose) @ rot_z(yaw_deg).T + np.asarray(offset, dtype=float)


def relaxed_pose():
    """Default-skeleton pose with arms hanging and knees slightly bent.

    Unlike the T-pose, no limb is exactly parallel to a body axis, so every
    segment's lateral axis is well defined.
    """
    p = default_rest_pose()
    for side in (1.0, -1.0):
        i = 0 if side > 0 else 1
        p[18 + i] = (0.21 * side, 0.02, 1.15)
        p[20 + i] = (0.23 * side, 0.06, 0.91)
        p[4 + i] = (0.10 * side, 0.03, 0.50)
    return p


def two_bone(root, target, l1, l2, pole):
    """Middle joint of a two-bone chain reaching for ``target``.

    Targets out of reach are clamped to a straight chain.  ``pole`` picks
    the bending side.
    """
    root, target = np.asarray(root, float), np.asarray(target, float)
    d = target - root
    dist = np.linalg.norm(d)
    dist_c = np.clip(dist, abs(l1 - l2) + 1e-9, l1 + l2 - 1e-9)
    n = d / dist
    a = (l1 * l1 - l2 * l2 + dist_c * dist_c) / (2 * dist_c)
    h = np.sqrt(max(l1 * l1 - a * a, 0.0))
    side = np.asarray(pole, float) - n * np.dot(pole, n)
    side /= np.linalg.norm(side)
    return root + a * n + h * side


def _pair_params(skeleton, radii=None):
    base = default_proxy_params(skeleton)
    if not radii:
        return base, base
    segs = []
    for s, p in zip(skeleton.segments, base.segments):
        r = radii.get(s.name)
        segs.append(SegmentProxy(p.kind, r=r, h_scale=p.h_scale) if r is not None else p)
    out = ProxyParams(segs, dict(base.sample_counts))
    return out, out


def parallel_arms(frames=30):
    """Side-by-side persons, A's left and B's right arm forward and parallel.

    All four arm cylinders have r = 4 cm and the arm axes are 6 cm apart, so
    the arms interpenetrate by 2 cm throughout.
    """
    sk = default_skeleton()
    out = np.empty((frames, 2, 22, 3))
    for t in range(frames):
        phi = np.radians(10.0 + 8.0 * np.sin(2 * np.pi * t / frames))
        d = np.array([0.0, np.cos(phi), -np.sin(phi)])
        a = relaxed_pose()
        b = place(relaxed_pose(), 0.0, (0.42, 0.0, 0.0))
        for pose, sh, el, wr in ((a, 16, 18, 20), (b, 17, 19, 21)):
            pose[el] = pose[sh] + 0.27 * d
            pose[wr] = pose[sh] + 0.52 * d
        shift = np.array([0.0, 0.01 * t, 0.0])
        out[t] = np.stack([a + shift, b + shift])
    radii = {n: 0.04 for n in ("left_upper_arm", "right_upper_arm", "left_forearm", "right_forearm")}
    return Scene("parallel_arms", MotionSequence(out), sk, _pair_params(sk, radii),
                 "two parallel arm cylinders overlapping by 2 cm")


def hand_in_chest(frames=60, depth=(0.005, 0.02)):
    """B faces A and pushes a hand into A's chest, ``depth`` (min, max) m."""
    sk = default_skeleton()
    out = np.empty((frames, 2, 22, 3))
    for t in range(frames):
        dep = depth[0] + (depth[1] - depth[0]) * 0.5 * (1.0 - np.cos(2 * np.pi * t / frames))
        a = relaxed_pose()
        b = place(relaxed_pose(), 180.0, (0.0, 0.53, 0.0))
        wrist = np.array([0.10, 0.10 - dep, 1.26])
        b[19] = two_bone(b[17], wrist, 0.27, 0.25, (0.3, 0.0, -1.0))
        b[21] = b[19] + 0.25 * (wrist - b[19]) / np.linalg.norm(wrist - b[19])
        out[t] = np.stack([a, b])
    return Scene("hand_in_chest", MotionSequence(out), sk, _pair_params(sk),
                 "a forearm reaching into the other person's chest")


def multi_region_scene(frames=40):
    """One forearm of B penetrating A's waist and A's forearm at once."""
    sk = default_skeleton()
    out = np.empty((frames, 2, 22, 3))
    for t in range(frames):
        a = relaxed_pose()
        b = place(relaxed_pose(), 90.0, (0.45, 0.0, 0.0))
        wrist = np.array([0.10 + 0.015 * np.sin(2 * np.pi * t / frames), 0.02, 1.12])
        b[18] = two_bone(b[16], wrist, 0.27, 0.25, (0.0, 0.3, -1.0))
        fore = (wrist - b[18]) / np.linalg.norm(wrist - b[18])
        b[20] = b[18] + 0.25 * fore
        cross = b[20] - 0.5 * 0.25 * fore            # middle of B's forearm
        a[18] = a[16] + 0.27 * _unit(cross - a[16] + np.array([0.14, -0.05, 0.0]))
        a[20] = a[18] + 0.25 * _unit(cross - a[18])
        out[t] = np.stack([a, b])
    return Scene("multi_region", MotionSequence(out), sk, _pair_params(sk),
                 "a forearm inside both the waist and the forearm of the other person")


def _unit(v):
    return v / np.linalg.norm(v)


def side_by_side_walk(frames=90, spacing=0.31):
    """Two walkers too close together: hips, thighs and arms overlap."""
    sk = default_skeleton()
    out = np.empty((frames, 2, 22, 3))
    for t in range(frames):
        poses = []
        for person, (x, phase) in enumerate(((0.0, 0.0), (spacing, 0.8))):
            p = relaxed_pose()
            for i, sign in ((0, 1.0), (1, -1.0)):
                ang = np.radians(15.0 * sign * np.sin(2 * np.pi * t / 30 + phase))
                hip = p[1 + i]
                rot = rot_x(ang)
                for k in (4 + i, 7 + i, 10 + i):
                    p[k] = hip + (p[k] - hip) @ rot.T
            poses.append(p + np.array([x, 0.012 * t, 0.0]))
        out[t] = np.stack(poses)
    return Scene("side_by_side_walk", MotionSequence(out), sk, _pair_params(sk),
                 "walking shoulder to shoulder with overlapping hips and legs")


def lean_in(frames=300):
    """B faces A and leans forward until the heads overlap, then back."""
    sk = default_skeleton()
    upper = [3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21]
    out = np.empty((frames, 2, 22, 3))
    for t in range(frames):
        theta = 8.0 + 16.0 * 0.5 * (1.0 - np.cos(2 * np.pi * t / frames))
        a = relaxed_pose()
        b = relaxed_pose()
        pivot = b[0].copy()
        b[upper] = pivot + (b[upper] - pivot) @ rot_x(-theta).T  # lean toward +y
        b = place(b, 180.0, (0.0, 0.40, 0.0))
        out[t] = np.stack([a, b])
    return Scene("lean_in", MotionSequence(out), sk, _pair_params(sk),
                 "one person leaning in until the heads overlap")


def interpenetration_suite():
    """The shipped scenes, 30 to 300 frames each."""
    return [parallel_arms(), hand_in_chest(), multi_region_scene(), side_by_side_walk(), lean_in()]
