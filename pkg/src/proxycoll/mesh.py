"""Triangle meshes: OBJ I/O, watertightness and a few synthetic generators."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(eq=False)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) meters
    faces: np.ndarray     # (T, 3) vertex indices

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=int).reshape(-1, 3)
        if len(self.vertices) < 3:
            raise ValueError("mesh needs at least 3 vertices")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("mesh has non-finite vertices")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")

    @property
    def triangles(self):
        return self.vertices[self.faces]

    def transformed(self, rotation=None, translation=None, scale=1.0):
        v = self.vertices * scale
        if rotation is not None:
            v = v @ np.asarray(rotation).T
        if translation is not None:
            v = v + translation
        return TriangleMesh(v, self.faces.copy())

    def bbox_diagonal(self):
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))


def concatenate(meshes):
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += len(m.vertices)
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces))


def is_watertight(mesh: TriangleMesh) -> bool:
    """Every undirected edge is shared by exactly two faces."""
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges.sort(axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool(len(counts)) and bool(np.all(counts == 2))


def load_obj(path) -> TriangleMesh:
    """Read ``v`` and ``f`` records; faces must be triangles."""
    verts, faces = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            if len(idx) != 3:
                raise ValueError(f"{path}:{lineno}: face with {len(idx)} vertices; "
                                 "only triangles are accepted")
            faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return TriangleMesh(np.array(verts), np.array(faces))


def save_obj(mesh: TriangleMesh, path):
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def box_mesh(half_extents=(0.5, 0.5, 0.5), center=(0, 0, 0), basis=None) -> TriangleMesh:
    e = np.asarray(half_extents, dtype=float)
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], float) * e
    faces = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],   # -x, +x
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],   # -y, +y
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],   # -z, +z
    ])
    if basis is not None:
        corners = corners @ np.asarray(basis).T
    return TriangleMesh(corners + center, faces)


def icosphere(subdivisions=2, radius=1.0) -> TriangleMesh:
    t = (1 + 5 ** 0.5) / 2
    v = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache, new = {}, []

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    return TriangleMesh(np.array(verts) * radius, np.array(faces))


def _frame_from_axis(axis):
    u = np.asarray(axis, float) / np.linalg.norm(axis)
    k = int(np.argmin(np.abs(u)))
    x = np.cross(u, np.eye(3)[k])
    x /= np.linalg.norm(x)
    return np.column_stack([x, np.cross(u, x), u])


def cylinder_mesh(a, b, radius, n_theta=48, n_z=8) -> TriangleMesh:
    """Closed, outward-oriented cylinder from ``a`` to ``b``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    length = np.linalg.norm(b - a)
    basis = _frame_from_axis(b - a)
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    rings = [np.column_stack([radius * np.cos(th), radius * np.sin(th), np.full(n_theta, z)])
             for z in np.linspace(0, length, n_z + 1)]
    verts = np.concatenate(rings + [np.array([[0, 0, 0.0], [0, 0, length]])])
    faces = []
    for r in range(n_z):
        for i in range(n_theta):
            j = (i + 1) % n_theta
            p, q = r * n_theta, (r + 1) * n_theta
            faces += [[p + i, p + j, q + j], [p + i, q + j, q + i]]
    bottom, top = len(verts) - 2, len(verts) - 1
    last = n_z * n_theta
    for i in range(n_theta):
        j = (i + 1) % n_theta
        faces.append([bottom, j, i])
        faces.append([top, last + i, last + j])
    return TriangleMesh(a + verts @ basis.T, np.array(faces))


def capsule_mesh(a, b, radius, n_theta=32, n_cap=8, n_z=6) -> TriangleMesh:
    """Closed, outward-oriented capsule around the segment ``a``-``b``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    length = np.linalg.norm(b - a)
    basis = _frame_from_axis(b - a)
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    # latitude rings from the bottom pole to the top pole, excluding poles
    zs, rs = [], []
    for k in range(1, n_cap + 1):
        phi = -np.pi / 2 + (np.pi / 2) * k / n_cap
        zs.append(radius * np.sin(phi))
        rs.append(radius * np.cos(phi))
    for k in range(1, n_z + 1):
        zs.append(length * k / n_z)
        rs.append(radius)
    for k in range(1, n_cap):
        phi = (np.pi / 2) * k / n_cap
        zs.append(length + radius * np.sin(phi))
        rs.append(radius * np.cos(phi))
    rings = [np.column_stack([r * np.cos(th), r * np.sin(th), np.full(n_theta, z)])
             for z, r in zip(zs, rs)]
    verts = np.concatenate(rings + [np.array([[0, 0, -radius], [0, 0, length + radius]])])
    nr = len(rings)
    faces = []
    for r in range(nr - 1):
        for i in range(n_theta):
            j = (i + 1) % n_theta
            p, q = r * n_theta, (r + 1) * n_theta
            faces += [[p + i, p + j, q + j], [p + i, q + j, q + i]]
    bottom, top = len(verts) - 2, len(verts) - 1
    last = (nr - 1) * n_theta
    for i in range(n_theta):
        j = (i + 1) % n_theta
        faces.append([bottom, j, i])
        faces.append([top, last + i, last + j])
    return TriangleMesh(a + verts @ basis.T, np.array(faces))
