"""Command line entry point: ``proxycoll <subcommand> ...``.

Exit codes: 0 on success, 1 on input errors (bad flags, missing or malformed
files, unknown config keys), 2 on numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchConfig, run_bench
from .collision import build_models, detect_positions, pose_pair
from .fitting import FitConfig, fit_proxies
from .guidance import HOST, MODES, collision_loss
from .mesh import box_mesh, concatenate, cylinder_mesh, load_obj, save_obj
from .metrics import metrics_from_reports
from .primitives import CYLINDER, load_proxy_params
from .resolve import PRESETS, ResolveConfig, resolve_sequence
from .skeleton import (default_proxy_params, default_rest_pose, default_skeleton, load_motion,
                       load_skeleton, save_motion)

log = logging.getLogger("proxycoll")

SCHEMA = "proxycoll/1"
THREADS_ENV = "PROXYCOLL_THREADS"


class InputError(Exception):
    """Bad user input; maps to exit code 1."""


class NumericalError(Exception):
    """Optimization or arithmetic failure; maps to exit code 2."""


_BLOCK_KEYS = {
    "paths": {"skeleton", "proxies", "in", "out", "report", "mesh", "rest"},
    "detect": {"broad_phase", "with_guidance", "mode", "antipodal_on"},
    "metrics": {"broad_phase"},
    "export": {"format", "frames"},
}


@dataclass
class GlobalConfig:
    verbosity: int = 0
    seed: int = 0
    threads: int | None = None
    paths: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)
    detect: dict = field(default_factory=dict)
    resolve: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    bench: dict = field(default_factory=dict)
    export: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise InputError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in doc:
            if key not in known:
                raise InputError(f"unknown config key {key!r}")
        for block, allowed in _BLOCK_KEYS.items():
            for key in doc.get(block, {}):
                if key not in allowed:
                    raise InputError(f"unknown config key '{block}.{key}'")
        for block, klass in (("fit", FitConfig), ("resolve", ResolveConfig), ("bench", BenchConfig)):
            allowed = {f.name for f in fields(klass)}
            for key in doc.get(block, {}):
                if key not in allowed:
                    raise InputError(f"unknown config key '{block}.{key}'")
        return cls(**doc)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _read_json(path):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"input file not found: {p}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON ({exc})") from exc


def _require(path, what):
    if path is None:
        raise InputError(f"missing {what}")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"input file not found: {p}")
    return p


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def _threads(args, default):
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise InputError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    elif args.threads is not None:
        n = args.threads
    elif args.gconf.threads is not None:
        n = args.gconf.threads
    else:
        n = default
    if n < 1:
        raise InputError("thread count must be >= 1")
    return n


def _path(args, name, flag_value):
    return flag_value if flag_value is not None else args.gconf.paths.get(name)


def _skeleton(args):
    path = _path(args, "skeleton", getattr(args, "skeleton", None))
    if path is None:
        return default_skeleton()
    return load_skeleton(_require(path, "skeleton file"))


def _proxies(args, skeleton):
    paths = _path(args, "proxies", getattr(args, "proxies", None))
    if not paths:
        params = default_proxy_params(skeleton)
        return (params, params)
    if isinstance(paths, str):
        paths = [paths]
    if len(paths) == 1:
        paths = [paths[0], paths[0]]
    if len(paths) != 2:
        raise InputError("--proxies takes one file (shared) or two files (A, B)")
    return tuple(load_proxy_params(_require(p, "proxy file")) for p in paths)


def _motion(args, skeleton):
    motion = load_motion(_require(_path(args, "in", args.input), "--in motion file"))
    motion.check(skeleton)
    return motion


def _output(args, name, flag_value, default):
    return Path(_path(args, name, flag_value) or default)


# --------------------------------------------------------------------------
# subcommands


def cmd_fit(args):
    skeleton = _skeleton(args)
    mesh = load_obj(_require(_path(args, "mesh", args.mesh), "--mesh OBJ file"))
    rest_path = _path(args, "rest", args.rest)
    if rest_path is None:
        if skeleton.n_joints != default_skeleton().n_joints:
            raise InputError("--rest is required for a custom skeleton")
        rest = default_rest_pose()
    else:
        doc = _read_json(rest_path)
        rest = np.asarray(doc["positions"] if isinstance(doc, dict) else doc, dtype=float)
        rest = rest.reshape(-1, 3)
    block = dict(args.gconf.fit)
    block.setdefault("seed", args.seed)
    for key in ("learning_rate", "max_iters", "convergence_tol"):
        if getattr(args, key) is not None:
            block[key] = getattr(args, key)
    cfg = FitConfig(**block)
    params, report = fit_proxies(mesh, skeleton, rest, cfg)
    out = _output(args, "out", args.out, "proxyparams.json")
    _write_json(out, {**params.to_dict(), "config": {**vars(cfg)}, "seed": cfg.seed})
    rep = {"schema": SCHEMA, "config": {**vars(cfg)}, "seed": cfg.seed, **report.to_dict()}
    _write_json(_output(args, "report", args.report, "fitreport.json"), rep)
    print(f"fit: loss {report.final_loss:.6g} after {report.iters} iterations -> {out}")


def cmd_detect(args):
    skeleton = _skeleton(args)
    params = _proxies(args, skeleton)
    motion = _motion(args, skeleton)
    block = dict(args.gconf.detect)
    with_guidance = args.with_guidance or block.get("with_guidance", False)
    broad = block.get("broad_phase", True) and not args.no_broad_phase
    mode = args.mode or block.get("mode", "auto")
    antipodal_on = block.get("antipodal_on", HOST)
    threads = _threads(args, os.cpu_count() or 1)
    models = build_models(skeleton, params, motion.positions[0], seed=args.seed)
    report = detect_positions(models, motion.positions, broad, threads)
    guidance = None
    if with_guidance:
        posed = pose_pair(models, motion.positions)
        guidance = collision_loss(report, posed, mode, antipodal_on)
    frames = []
    for f, r in enumerate(report.split_frames(motion.frame_count)):
        if guidance is None:
            frames.append(r.to_json())
        else:
            sel = report.frame == f
            frames.append(r.to_json(_Sliced(guidance, sel)))
    config = {"broad_phase": broad, "with_guidance": with_guidance, "mode": mode,
              "antipodal_on": antipodal_on, "threads": threads}
    doc = {"schema": SCHEMA, "config": config, "seed": args.seed,
           "total_points": len(report), "frames": frames}
    out = _output(args, "out", args.out, "collisions.json")
    _write_json(out, doc)
    print(f"detect: {len(report)} collision points in {motion.frame_count} frames -> {out}")


class _Sliced:
    """Per-frame view of a LossOutput, in the report's stable frame order."""

    def __init__(self, loss, mask):
        idx = np.nonzero(mask)[0]
        self.included = loss.included[idx]
        self.directions = loss.directions[idx]
        self.targets_q = loss.targets_q[idx]


def cmd_resolve(args):
    skeleton = _skeleton(args)
    params = _proxies(args, skeleton)
    motion = _motion(args, skeleton)
    block = dict(args.gconf.resolve)
    block.setdefault("seed", args.seed)
    if args.max_iters is not None:
        block["max_iters"] = args.max_iters
    if args.mode is not None:
        block["mode"] = args.mode
    block["threads"] = _threads(args, os.cpu_count() or 1)
    cfg = ResolveConfig.from_preset(args.preset, **block)
    refined, report = resolve_sequence(motion, params, skeleton, cfg)
    if report.status == "non_finite":
        raise NumericalError(report.diagnostic)
    out = _output(args, "out", args.out, "refined.json")
    if out.suffix.lower() in (".bin", ".pcmo"):
        save_motion(refined, out)
    else:
        _write_json(out, {"schema": SCHEMA, "config": cfg.to_dict(), "preset": args.preset,
                          "seed": cfg.seed, **refined.to_dict()})
    doc = report.to_dict()
    doc["preset"] = args.preset
    doc["seed"] = cfg.seed
    _write_json(_output(args, "report", args.report, "report.json"), doc)
    print(f"resolve: {report.status} after {report.iterations} iterations; coll_dis "
          f"{report.before.coll_dis:.4f} -> {report.after.coll_dis:.4f} m "
          f"({100 * report.coll_dis_reduction:.1f}% lower), coll_ro {report.before.coll_ro:.3f} -> "
          f"{report.after.coll_ro:.3f}, max bone drift {report.max_bone_drift_pct:.3f}%")


def cmd_metrics(args):
    skeleton = _skeleton(args)
    params = _proxies(args, skeleton)
    motion = _motion(args, skeleton)
    broad = args.gconf.metrics.get("broad_phase", True)
    threads = _threads(args, os.cpu_count() or 1)
    models = build_models(skeleton, params, motion.positions[0], seed=args.seed)
    report = detect_positions(models, motion.positions, broad, threads)
    m = metrics_from_reports(report.split_frames(motion.frame_count))
    doc = {"schema": SCHEMA, "config": {"broad_phase": broad, "threads": threads},
           "seed": args.seed, **m.to_dict()}
    out = _output(args, "out", args.out, "metrics.json")
    _write_json(out, doc)
    print(f"metrics: coll_dis {m.coll_dis:.4f} m, coll_ro {m.coll_ro:.3f} -> {out}")


def cmd_bench(args):
    block = dict(args.gconf.bench)
    if args.bench_config is not None:
        doc = _read_json(args.bench_config)
        try:
            block.update(BenchConfig.from_dict(doc).to_dict())
        except TypeError as exc:
            raise InputError(str(exc)) from exc
    block.setdefault("seed", args.seed)
    env = os.environ.get(THREADS_ENV)
    if env or args.threads is not None:
        block["threads"] = _threads(args, 1)
    cfg = BenchConfig.from_dict(block)
    report = run_bench(cfg, progress=lambda t: log.info("%s %d: median %.4f s",
                                                        t.pipeline, t.size, t.median))
    out = _output(args, "out", args.out, "bench_report.json")
    _write_json(out, report.to_dict())
    print(report.table())


def _frame_range(spec, n):
    if spec is None:
        return range(n)
    if isinstance(spec, list):
        return [int(f) for f in spec]
    parts = str(spec).split(":")
    try:
        if len(parts) == 1:
            return [int(parts[0])]
        lo = int(parts[0]) if parts[0] else 0
        hi = int(parts[1]) if parts[1] else n
    except ValueError:
        raise InputError(f"bad frame range {spec!r}; use N or START:STOP") from None
    return range(lo, min(hi, n))


def cmd_export_frames(args):
    skeleton = _skeleton(args)
    params = _proxies(args, skeleton)
    motion = _motion(args, skeleton)
    block = args.gconf.export
    fmt = args.format or block.get("format", "json")
    if fmt not in ("json", "obj"):
        raise InputError(f"unknown export format {fmt!r}")
    frames = _frame_range(args.frames if args.frames is not None else block.get("frames"),
                          motion.frame_count)
    for f in frames:
        if not 0 <= f < motion.frame_count:
            raise InputError(f"frame {f} out of range (0..{motion.frame_count - 1})")
    out_dir = Path(_path(args, "out", args.out) or "frames")
    out_dir.mkdir(parents=True, exist_ok=True)
    models = build_models(skeleton, params, motion.positions[0], seed=args.seed)
    posed = pose_pair(models, motion.positions)
    names = [s.name for s in skeleton.segments]
    for f in frames:
        persons = []
        for b in posed:
            prims = []
            for j in range(len(names)):
                if not b.valid[f, j]:
                    continue
                pr = b.primitive(f, j)
                prims.append({"segment": j, "name": names[j], "kind": pr.kind,
                              "origin": pr.origin.tolist(), "basis": pr.basis.tolist(),
                              "dims": [float(x) for x in pr.dims]})
            persons.append(prims)
        if fmt == "json":
            _write_json(out_dir / f"frame_{f:05d}.json",
                        {"schema": SCHEMA, "frame": f, "persons": persons,
                         "config": {"format": fmt, "frames": [int(x) for x in frames]},
                         "seed": args.seed})
        else:
            for p, prims in enumerate(persons):
                save_obj(_frame_mesh(prims), out_dir / f"frame_{f:05d}_person{p}.obj")
    print(f"export-frames: {len(frames)} frames ({fmt}) -> {out_dir}")


def _frame_mesh(prims):
    parts = []
    for pr in prims:
        origin, basis = np.asarray(pr["origin"]), np.asarray(pr["basis"])
        if pr["kind"] == CYLINDER:
            r, h = pr["dims"]
            parts.append(cylinder_mesh(origin, origin + h * basis[:, 2], r, n_theta=24, n_z=1))
        else:
            parts.append(box_mesh(pr["dims"], origin, basis))
    return concatenate(parts)


# --------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="proxycoll", description="Proxy-geometry collision detection and "
                     "resolution for two-person motion.")
    parser.add_argument("--version", action="version", version=f"proxycoll {__version__}")
    parser.add_argument("--config", dest="global_config", metavar="FILE",
                        help="JSON file with global settings and per-subcommand blocks")
    parser.add_argument("-v", "--verbose", action="count", default=None,
                        help="more logging (repeatable)")
    parser.add_argument("--seed", type=int, default=None, help="sampling seed (default 0)")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker threads; the {THREADS_ENV} environment variable overrides it")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def common(p, motion=True, proxies=True):
        p.add_argument("--skeleton", metavar="FILE", help="skeleton JSON (default: built-in 22 joints)")
        if proxies:
            p.add_argument("--proxies", nargs="+", metavar="FILE",
                           help="proxy parameter JSON for person A and B (one file is shared)")
        if motion:
            p.add_argument("--in", dest="input", metavar="FILE", help="motion file (JSON or PCMO)")

    p = sub.add_parser("fit", help="fit proxy sizes to a body mesh")
    common(p, motion=False, proxies=False)
    p.add_argument("--mesh", metavar="OBJ", help="triangulated body mesh")
    p.add_argument("--rest", metavar="FILE", help="rest pose JSON, N x 3 (default: built-in)")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--tol", dest="convergence_tol", type=float)
    p.add_argument("--out", metavar="FILE", help="proxy parameters (default proxyparams.json)")
    p.add_argument("--report", metavar="FILE", help="fit report (default fitreport.json)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("detect", help="find collision points in every frame")
    common(p)
    p.add_argument("--with-guidance", action="store_true", help="add guidance vectors d and targets q")
    p.add_argument("--mode", choices=MODES, help="guidance aggregation mode (default auto)")
    p.add_argument("--no-broad-phase", action="store_true", help="test every primitive pair")
    p.add_argument("--out", metavar="FILE", help="collisions JSON (default collisions.json)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("resolve", help="refine a motion to remove interpenetration")
    common(p)
    p.add_argument("--preset", choices=sorted(PRESETS), default="adaption")
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--out", metavar="FILE", help="refined motion (default refined.json)")
    p.add_argument("--report", metavar="FILE", help="resolve report (default report.json)")
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("metrics", help="coll_dis and coll_ro of a motion")
    common(p)
    p.add_argument("--out", metavar="FILE", help="metrics JSON (default metrics.json)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench", help="time the proxy pipeline against a vertex baseline")
    p.add_argument("--config", dest="bench_config", metavar="FILE", help="bench config JSON")
    p.add_argument("--out", metavar="FILE", help="bench report (default bench_report.json)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export-frames", help="dump posed primitives per frame (JSON or OBJ)")
    common(p)
    p.add_argument("--format", choices=("json", "obj"))
    p.add_argument("--frames", help="frame N or range START:STOP (default all)")
    p.add_argument("--out", metavar="DIR", help="output directory (default frames)")
    p.set_defaults(func=cmd_export_frames)
    return parser


def _setup_logging(verbosity):
    level = logging.WARNING - 10 * min(verbosity, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("proxycoll: error: a subcommand is required", file=sys.stderr)
        return 1
    try:
        gdoc = _read_json(args.global_config) if args.global_config else {}
        args.gconf = GlobalConfig.from_dict(gdoc)
        _setup_logging(args.verbose if args.verbose is not None else args.gconf.verbosity)
        if args.seed is None:
            args.seed = args.gconf.seed
        args.func(args)
    except (InputError, FileNotFoundError, ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, FileNotFoundError) and exc.filename:
            msg = f"input file not found: {exc.filename}"
        else:
            msg = str(exc)
        print(f"proxycoll {args.command}: error: {msg}", file=sys.stderr)
        return 1
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"proxycoll {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
