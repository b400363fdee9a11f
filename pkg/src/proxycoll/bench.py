"""Timing harness: proxy collision pipeline against a vertex-distance baseline.

Both pipelines see the same fixed random two-person scenes.  The proxy side
poses the surface samples, detects collision points and evaluates the
collision loss.  The baseline poses a dense vertex cloud per person and
evaluates an all-pairs vertex-distance penalty between the two people.
"""
from __future__ import annotations

import logging
import resource
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .collision import build_models, detect_batch, detect_positions, pose_pair
from .guidance import collision_loss
from .mesh import box_mesh, concatenate, cylinder_mesh
from .metrics import winding_numbers
from .primitives import CUBOID, CYLINDER, allocate_counts, sample_surface
from .skeleton import BodyModel, default_proxy_params, default_skeleton
from .synthetic import place, relaxed_pose

log = logging.getLogger(__name__)

BASELINES = ("vertex", "winding")


@dataclass
class BenchConfig:
    sample_counts: list = field(default_factory=lambda: [10, 30, 50])
    mesh_vertex_counts: list = field(default_factory=lambda: [128, 1024, 6890])
    frames: int = 300
    repetitions: int = 20
    seed: int = 0
    warmup: int = 1
    threads: int = 1
    baseline: str = "vertex"
    #: contact distance of the vertex baseline penalty (m)
    contact_distance: float = 0.02

    def __post_init__(self):
        if not self.sample_counts or not self.mesh_vertex_counts:
            raise ValueError("sample_counts and mesh_vertex_counts must not be empty")
        if min(self.sample_counts) < 1 or min(self.mesh_vertex_counts) < 1:
            raise ValueError("sample and vertex counts must be positive")
        if self.frames < 1 or self.repetitions < 1 or self.warmup < 0 or self.threads < 1:
            raise ValueError("frames, repetitions and threads must be positive")
        if self.baseline not in BASELINES:
            raise ValueError(f"baseline must be one of {BASELINES}, got {self.baseline!r}")

    @classmethod
    def from_dict(cls, doc):
        known = set(cls.__dataclass_fields__)
        for key in doc:
            if key not in known:
                raise ValueError(f"unknown bench config key {key!r}")
        return cls(**doc)

    def to_dict(self):
        return asdict(self)


@dataclass
class Timing:
    pipeline: str       # "proxy" or "baseline"
    size: int           # samples per primitive, or vertices per person
    times: list

    @property
    def median(self):
        return float(np.median(self.times))

    @property
    def p10(self):
        return float(np.percentile(self.times, 10))

    @property
    def p90(self):
        return float(np.percentile(self.times, 90))

    def to_dict(self):
        return {"pipeline": self.pipeline, "size": self.size, "median": self.median,
                "p10": self.p10, "p90": self.p90, "times": list(self.times)}


@dataclass
class BenchReport:
    config: BenchConfig
    timings: list
    peak_rss_mb: float
    exponents: dict     # fitted log-log slopes per pipeline
    n_segments: int

    def _get(self, pipeline, size):
        for t in self.timings:
            if t.pipeline == pipeline and t.size == size:
                return t
        raise KeyError((pipeline, size))

    def proxy_ratio(self):
        """Median time at the largest sample count over the smallest."""
        c = self.config.sample_counts
        return self._get("proxy", max(c)).median / self._get("proxy", min(c)).median

    def speedup(self):
        """Largest baseline over largest proxy configuration (median times)."""
        return (self._get("baseline", max(self.config.mesh_vertex_counts)).median
                / self._get("proxy", max(self.config.sample_counts)).median)

    def to_dict(self):
        return {"schema": "proxycoll/1", "config": self.config.to_dict(),
                "timings": [t.to_dict() for t in self.timings],
                "peak_rss_mb": self.peak_rss_mb, "exponents": self.exponents,
                "proxy_ratio": self.proxy_ratio(), "speedup": self.speedup(),
                "n_segments": self.n_segments}

    def table(self):
        rows = [f"{'pipeline':<10}{'size':>8}{'median s':>12}{'p10 s':>12}{'p90 s':>12}"]
        for t in self.timings:
            rows.append(f"{t.pipeline:<10}{t.size:>8}{t.median:>12.5f}{t.p10:>12.5f}{t.p90:>12.5f}")
        rows.append(f"proxy ratio t({max(self.config.sample_counts)})/t({min(self.config.sample_counts)})"
                    f" = {self.proxy_ratio():.2f}")
        rows.append(f"speedup vs {max(self.config.mesh_vertex_counts)}-vertex baseline"
                    f" = {self.speedup():.1f}x")
        rows.append("scaling exponents: " + ", ".join(f"{k} {v:.2f}" for k, v in self.exponents.items()))
        rows.append(f"peak RSS {self.peak_rss_mb:.0f} MB")
        return "\n".join(rows)


def bench_scenes(frames, seed=0):
    """Fixed random two-person scenes, (frames, 2, 22, 3).

    Person B stands 0.35 to 0.6 m from A with a random heading, and every
    joint is jittered by a few centimeters, so some frames collide.
    """
    rng = np.random.default_rng(seed)
    base = relaxed_pose()
    out = np.empty((frames, 2) + base.shape)
    for t in range(frames):
        ang = rng.uniform(0.0, 2.0 * np.pi)
        dist = rng.uniform(0.35, 0.6)
        b = place(base, rng.uniform(0.0, 360.0), (dist * np.cos(ang), dist * np.sin(ang), 0.0))
        out[t, 0] = base + rng.normal(scale=0.02, size=base.shape)
        out[t, 1] = b + rng.normal(scale=0.02, size=base.shape)
    return out


class _VertexCloud:
    """Dense surface points attached rigidly to the posed proxies."""

    def __init__(self, model: BodyModel, n_vertices, seed=0):
        self.model = model
        dims = [p.dims(p.ref_length or 1.0) for p in model.params.segments]
        areas = [_area(k, d) for k, d in zip(model.kinds, dims)]
        counts = allocate_counts(n_vertices, areas)
        locs, segs = [], []
        for j, (kind, d, n) in enumerate(zip(model.kinds, dims, counts)):
            if n == 0:
                continue
            locs.append(sample_surface(kind, d, int(n), seed=seed + 1000 + j).local_points)
            segs.append(np.full(int(n), j))
        self.local = np.concatenate(locs)
        self.seg = np.concatenate(segs)

    def pose(self, joints):
        posed = self.model.pose(joints)
        basis = posed.bases[:, self.seg]                     # (F, V, 3, 3)
        return posed.origins[:, self.seg] + np.einsum("fvij,vj->fvi", basis, self.local)


def _area(kind, dims):
    if kind == CYLINDER:
        r, h = dims
        return 2 * np.pi * r * (r + h)
    e = np.asarray(dims)
    return 8 * (e[0] * e[1] + e[1] * e[2] + e[0] * e[2])


def _vertex_penalty(va, vb, delta, chunk=512):
    """Sum over frames of sum_{a, b} max(0, delta - |a - b|)^2."""
    total = 0.0
    bb = np.einsum("fvk,fvk->fv", vb, vb)
    for f in range(len(va)):
        for lo in range(0, va.shape[1], chunk):
            a = va[f, lo:lo + chunk]
            d2 = np.einsum("vk,vk->v", a, a)[:, None] + bb[f][None, :] - 2.0 * a @ vb[f].T
            gap = delta - np.sqrt(np.maximum(d2, 0.0))
            total += float(np.sum(np.square(gap[gap > 0])))
    return total


def _winding_penalty(va, joints_b, model_b, n_theta):
    """Count of A's vertices inside B's proxy meshes by winding number."""
    count = 0
    posed = model_b.pose(joints_b)
    for f in range(len(va)):
        parts = []
        for j, kind in enumerate(model_b.kinds):
            prim = posed.primitive(f, j)
            if kind == CYLINDER:
                r, h = prim.dims
                a = prim.origin
                parts.append(cylinder_mesh(a, a + h * prim.basis[:, 2], r, n_theta=n_theta, n_z=2))
            else:
                parts.append(box_mesh(prim.dims, prim.origin, prim.basis))
        mesh = concatenate(parts)
        count += int(np.sum(winding_numbers(mesh, va[f]) > 0.5))
    return count


def _time(fn, reps, warmup):
    for _ in range(warmup):
        fn()
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return out


def _slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0]) if len(x) > 1 else float("nan")


def run_bench(config: BenchConfig | None = None, progress=None) -> BenchReport:
    """Time both pipelines on the same scenes; see :class:`BenchConfig`."""
    cfg = config or BenchConfig()
    if cfg.repetitions < 5:
        log.warning("fewer than 5 repetitions; statistics are unreliable")
    skeleton = default_skeleton()
    params = default_proxy_params(skeleton)
    joints = bench_scenes(cfg.frames, cfg.seed)
    ref = joints[0]
    timings = []

    for n in cfg.sample_counts:
        models = build_models(skeleton, (params, params), ref, {CYLINDER: n, CUBOID: n}, cfg.seed)

        def proxy_step(models=models):
            if cfg.threads > 1:
                report = detect_positions(models, joints, threads=cfg.threads)
                posed = pose_pair(models, joints)
            else:
                posed = pose_pair(models, joints)
                report = detect_batch(*posed)
            return collision_loss(report, posed).value

        timings.append(Timing("proxy", n, _time(proxy_step, cfg.repetitions, cfg.warmup)))
        if progress:
            progress(timings[-1])

    vertex_models = build_models(skeleton, (params, params), ref, seed=cfg.seed)
    for v in cfg.mesh_vertex_counts:
        clouds = [_VertexCloud(m, v, cfg.seed) for m in vertex_models]

        if cfg.baseline == "vertex":
            def baseline_step(clouds=clouds):
                va = clouds[0].pose(joints[:, 0])
                vb = clouds[1].pose(joints[:, 1])
                return _vertex_penalty(va, vb, cfg.contact_distance)
        else:
            n_theta = max(8, v // (2 * skeleton.n_segments))

            def baseline_step(clouds=clouds, n_theta=n_theta):
                va = clouds[0].pose(joints[:, 0])
                return _winding_penalty(va, joints[:, 1], vertex_models[1], n_theta)

        timings.append(Timing("baseline", v, _time(baseline_step, cfg.repetitions, cfg.warmup)))
        if progress:
            progress(timings[-1])

    n_seg = skeleton.n_segments
    proxy = [t for t in timings if t.pipeline == "proxy"]
    base = [t for t in timings if t.pipeline == "baseline"]
    exponents = {
        "proxy": _slope([t.size * n_seg for t in proxy], [t.median for t in proxy]),
        "baseline": _slope([t.size for t in base], [t.median for t in base]),
    }
    rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0   # kilobytes on Linux
    return BenchReport(cfg, timings, rss, exponents, n_seg)
