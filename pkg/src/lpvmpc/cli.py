"""Command-line front end.

Exit codes: 0 success, 1 configuration or input error, 2 aborted run.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics, plots
from .config import ConfigError, RunConfig, load_config, schema_text
from .simulator import RunLog, run_closed_loop
from .trajectory import (
    SHAPES, TrajectoryError, generate, load_trajectory, write_trajectory_csv,
)
from .tuner import analyze_path

EXIT_OK, EXIT_INPUT, EXIT_ABORT = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _fail(msg: str, code: int = EXIT_INPUT) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.out_dir is not None:
        out["output.dir"] = args.out_dir
    if args.seed is not None:
        out["sim.seed"] = str(args.seed)
    return out


def _config(args) -> RunConfig:
    return load_config(args.config, _overrides(args))


# -- simulate ---------------------------------------------------------------------

def _simulate_one(cfg: RunConfig, mode: str) -> tuple[str, int, str]:
    """Run one simulation and write its outputs; returns (name, exit code, report)."""
    traj = cfg.load_trajectory()
    log = run_closed_loop(traj, cfg.controller, cfg.sim, cfg.vehicle, mode=mode)
    os.makedirs(cfg.out_dir, exist_ok=True)
    base = os.path.join(cfg.out_dir, cfg.name)
    log.write_csv(base + ".csv")
    if len(log) == 0:
        return cfg.name, EXIT_ABORT if log.aborted else EXIT_OK, "empty run (no control cycles)"
    summ = metrics.summarize(log)
    extra = {"cycles": len(log), "finished": log.finished, "aborted": log.aborted,
             "stale": log.pipeline.stale if log.pipeline else 0}
    metrics.write_summary(base + ".summary", summ, extra)
    plots.write_run_plots(log, traj, base)
    report = metrics.format_table({cfg.name: summ})
    if log.aborted:
        return cfg.name, EXIT_ABORT, report + f"\nrun aborted: {log.message}"
    return cfg.name, EXIT_OK, report


def _simulate_job(job):
    cfg, mode = job
    try:
        return _simulate_one(cfg, mode)
    except (ConfigError, TrajectoryError, OSError) as exc:
        return cfg.name, EXIT_INPUT, f"error: {exc}"


def cmd_simulate(args) -> int:
    try:
        cfg = _config(args)
        mode = "lockstep" if args.lockstep else "concurrent"
        if args.trajectories:
            jobs = [(_with_trajectory(cfg, p), mode) for p in args.trajectories]
        else:
            jobs = [(cfg, mode)]
        for c, _ in jobs:
            c.load_trajectory()
    except (ConfigError, TrajectoryError) as exc:
        return _fail(str(exc))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_simulate_job, jobs))
    else:
        results = [_simulate_job(j) for j in jobs]
    code = EXIT_OK
    for name, rc, report in results:
        print(report, file=sys.stderr if rc == EXIT_INPUT else sys.stdout)
        code = max(code, rc)
    return code


def _with_trajectory(cfg: RunConfig, path: str) -> RunConfig:
    return replace(cfg, trajectory_file=path, name=Path(path).stem)


# -- tune -------------------------------------------------------------------------

def cmd_tune(args) -> int:
    try:
        cfg = _config(args)
        traj = load_trajectory(args.trajectory, closed=cfg.closed, smooth=cfg.smooth,
                               speed_mode=cfg.speed_mode, limits=cfg.limits)
    except TrajectoryError as exc:
        row = getattr(exc, "row", None)
        where = f" (row {row})" if row else ""
        return _fail(f"{args.trajectory}{where}: {exc}")
    except (ConfigError, OSError) as exc:
        return _fail(str(exc))
    table = cfg.controller.tuning
    info = analyze_path(traj, table)
    w = table.weights(info.tier)
    fmt = ", ".join
    print(f"Max Curvature (1/m): {info.kappa_max:.6g}")
    print(f"Total Curvature: {info.total_curvature:.6g}")
    print(f"Tier: {info.tier} ({table.tier_name(info.tier)})")
    print(f"Q: {fmt(f'{q:g}' for q in w.Q)}")
    print(f"S: {fmt(f'{s:g}' for s in w.S)}")
    print(f"R: {fmt(f'{r:g}' for r in w.R)}")
    print(f"Segments: {len(info.segments)}")
    return EXIT_OK


# -- metrics ----------------------------------------------------------------------

def cmd_metrics(args) -> int:
    try:
        cfg = _config(args)
        log = RunLog.read_csv(args.runlog)
        if len(log) == 0:
            return _fail(f"{args.runlog}: run log has no rows")
        traj = load_trajectory(args.trajectory, closed=cfg.closed, smooth=cfg.smooth,
                               speed_mode=cfg.speed_mode, limits=cfg.limits)
    except (ConfigError, TrajectoryError, OSError, ValueError) as exc:
        return _fail(str(exc))
    e_d, e_theta, cte = metrics.path_errors(traj, log.X, log.Y, log.psi,
                                            cfg.controller.anchor_window)
    summ = metrics.summarize_errors(e_d, e_theta, cte)
    print(metrics.format_table({Path(args.runlog).stem: summ}))
    return EXIT_OK


# -- gen-trajectory -----------------------------------------------------------------

def cmd_gen_trajectory(args) -> int:
    if args.shape not in SHAPES:
        return _fail(f"invalid shape {args.shape!r}; valid shapes: {', '.join(SHAPES)}")
    try:
        xy, _closed = generate(args.shape, ds=args.ds, length=args.length, radius=args.radius,
                               kappa_max=args.kappa_max, offset=args.offset)
    except ValueError as exc:
        return _fail(str(exc))
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, args.output or f"{args.shape}.csv")
    v = None if args.speed is None else np.full(len(xy), args.speed)
    write_trajectory_csv(path, xy, v)
    print(f"wrote {len(xy)} samples to {path}")
    return EXIT_OK


def cmd_config(args) -> int:
    sys.stdout.write(schema_text())
    return EXIT_OK


# -- entry point -------------------------------------------------------------------

def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # Subcommands repeat the global flags with suppressed defaults so a flag
    # given before the subcommand is not reset.
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = _Parser(add_help=False)
    common.add_argument("--config", default=d(None),
                        help="run configuration file (key = value lines)")
    common.add_argument("--out-dir", default=d(None), help="output folder (overrides output.dir)")
    common.add_argument("--seed", type=int, default=d(None),
                        help="noise seed (overrides sim.seed)")
    common.add_argument("--lockstep", action="store_true", default=d(False),
                        help="run the pipeline stages serially for reproducible logs")
    common.add_argument("--jobs", type=int, default=d(1), help="parallel simulations")
    common.add_argument("--set", action="append", default=d(None), metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = _Parser(prog="lpvmpc", description="LPV-MPC path tracking simulator",
                parents=[_global_flags(suppress=False)])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="run closed-loop simulations")
    s.add_argument("trajectories", nargs="*", help="trajectory CSVs (default: trajectory.file)")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("tune", parents=[common], help="report curvature and selected weights")
    t.add_argument("trajectory")
    t.set_defaults(func=cmd_tune)

    m = sub.add_parser("metrics", parents=[common], help="recompute the metrics of a run log")
    m.add_argument("runlog")
    m.add_argument("trajectory")
    m.set_defaults(func=cmd_metrics)

    g = sub.add_parser("gen-trajectory", parents=[common], help="write a synthetic path CSV")
    g.add_argument("shape", help=f"one of {', '.join(SHAPES)}")
    g.add_argument("--ds", type=float, default=0.5, help="sample spacing (m)")
    g.add_argument("--length", type=float, default=100.0, help="line and s_curve length (m)")
    g.add_argument("--radius", type=float, default=20.0, help="circle radius (m)")
    g.add_argument("--kappa-max", type=float, default=0.1, help="figure_eight peak curvature")
    g.add_argument("--offset", type=float, default=3.5, help="s_curve lateral shift (m)")
    g.add_argument("--speed", type=float, help="write a constant v column (m/s)")
    g.add_argument("--output", "-o", help="file name inside the output folder")
    g.set_defaults(func=cmd_gen_trajectory)

    c = sub.add_parser("config", parents=[common], help="print every configuration key")
    c.set_defaults(func=cmd_config)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        return _fail("--jobs must be >= 1")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
