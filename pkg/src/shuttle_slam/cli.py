"""Command-line entry point: ``shuttle-slam {slam,sim,gen,eval,config}``.

Exit codes: 0 success, 1 usage or input error, 2 finished with degradations
(non-converged frames, a simulation that stopped early).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigFileError, Settings, default_config_text, load_config
from .lidar import LidarModel
from .scan import FrameLogError, InvalidFrameError, format_number, read_frames, write_frames
from .sim import (SCENARIOS, Mode, SimRun, generate_scenario, read_report_csv, read_truth_csv,
                  run_closed_loop, write_truth_csv)
from .slam import ConfigError, FrameOrderError, SlamSession, read_trajectory_csv
from .vehicle import fit_path, read_waypoints
from .world import WorldFileError, default_loop_waypoints, load_world, make_default_world

log = logging.getLogger("shuttle_slam")

EXIT_OK, EXIT_INPUT, EXIT_DEGRADED = 0, 1, 2


class InputError(Exception):
    """Bad user input; reported on stderr with exit status 1."""


def _settings(path) -> Settings:
    if path is None:
        return Settings()
    try:
        return load_config(path)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    except ConfigFileError as exc:
        raise InputError(f"{path}: {exc}") from None


# -- slam ------------------------------------------------------------------

def cmd_slam(args) -> int:
    settings = _settings(args.config).with_solver(args.solver, args.iters)
    try:
        session = SlamSession(settings.slam)
    except ConfigError as exc:
        raise InputError(str(exc)) from None
    try:
        with open(args.frames) as fh:
            for cloud in read_frames(fh):
                session.process_frame(cloud)
    except OSError as exc:
        raise InputError(f"cannot read frames {args.frames}: {exc.strerror}") from None
    except (FrameLogError, InvalidFrameError, FrameOrderError) as exc:
        raise InputError(f"{args.frames}: {exc}") from None
    try:
        session.export(args.out)
    except OSError as exc:
        raise InputError(str(exc)) from None
    reports = session.trajectory
    bad = [r for r in reports if r.status not in ("ok", "bootstrap")]
    print(f"frames = {len(reports)}")
    print(f"degraded = {len(bad)}")
    if reports:
        p = reports[-1].pose
        print(f"final_pose = {format_number(p.x)} {format_number(p.y)} {format_number(p.theta)}")
    return EXIT_DEGRADED if bad else EXIT_OK


# -- sim -------------------------------------------------------------------

def cmd_sim(args) -> int:
    settings = _settings(args.config)
    try:
        world = make_default_world() if args.world == "default" else load_world(args.world)
    except OSError as exc:
        raise InputError(f"cannot read world {args.world}: {exc.strerror}") from None
    except WorldFileError as exc:
        raise InputError(f"{args.world}: {exc}") from None
    try:
        waypoints = default_loop_waypoints() if args.path is None else read_waypoints(args.path)
        spline = fit_path(waypoints, settings.sim.get("seg_len", SimRun.seg_len))
    except OSError as exc:
        raise InputError(f"cannot read path {args.path}: {exc.strerror}") from None
    except ValueError as exc:
        raise InputError(f"path: {exc}") from None
    start = spline.point(0, 0.0)
    if not world.inside_bounds(*start) or world.blocked(*start, settings.lidar.mount_height):
        raise InputError(f"path start ({start[0]:.2f}, {start[1]:.2f}) is not reachable")

    run = SimRun(world, waypoints, Mode(args.mode), settings.lidar, settings.vehicle,
                 settings.controller, settings.slam, **settings.sim)
    report = run_closed_loop(run)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "run_report.csv", "w", newline="") as fh:
            report.write_csv(fh)
        (out / "summary.txt").write_text(f"mode = {run.mode.value}\n" + report.summary())
    except OSError as exc:
        raise InputError(f"cannot write to {out}: {exc}") from None
    sys.stdout.write(f"mode = {run.mode.value}\n" + report.summary())
    return EXIT_DEGRADED if report.failed else EXIT_OK


# -- gen -------------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.frames <= 0:
        raise InputError("--frames must be positive")
    settings = _settings(args.config)
    lidar: LidarModel = settings.lidar
    if args.noise is not None:
        lidar = replace(lidar, range_noise=args.noise)
    frames, truth = generate_scenario(args.scenario, args.frames, lidar, args.seed)
    out = Path(args.out)
    truth_path = Path(args.truth) if args.truth else out.with_name(out.stem + "_truth.csv")
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as fh:
            write_frames(fh, frames)
        with open(truth_path, "w", newline="") as fh:
            write_truth_csv(fh, truth)
    except OSError as exc:
        raise InputError(f"cannot write {out}: {exc}") from None
    print(f"frames = {len(frames)}")
    print(f"points = {sum(len(f) for f in frames)}")
    print(f"truth = {truth_path}")
    return EXIT_OK


# -- eval ------------------------------------------------------------------

EVAL_COLUMNS = ["run", "frames", "valid_frames", "mean_align_error", "mean_iterations",
                "convergence_rate", "rmse_m", "delta_align_error", "delta_iterations",
                "delta_rmse_m"]


def polyline_distance(points: np.ndarray, path: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest point of a polyline."""
    points = np.asarray(points, float).reshape(-1, 2)
    path = np.asarray(path, float).reshape(-1, 2)
    if len(path) == 1:
        return np.hypot(*(points - path[0]).T)
    a, b = path[:-1], path[1:]
    ab = b - a
    len2 = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
    out = np.empty(len(points))
    for i, p in enumerate(points):
        t = np.clip(np.sum((p - a) * ab, axis=1) / len2, 0.0, 1.0)
        q = a + t[:, None] * ab
        out[i] = float(np.min(np.hypot(*(q - p).T)))
    return out


def _eval_run(path: Path, truth: np.ndarray | None) -> dict:
    if (path / "trajectory.csv").exists():
        rows = read_trajectory_csv(path / "trajectory.csv")
        statuses = _frame_statuses(path / "frames.csv", len(rows))
        valid = [r for r, s in zip(rows, statuses) if s == "ok"]
        matched = [s for s in statuses if s != "bootstrap"]
        stats = {
            "frames": len(rows),
            "valid_frames": len(valid),
            "mean_align_error": float(np.mean([r.align_error for r in valid])) if valid else math.nan,
            "mean_iterations": float(np.mean([r.iterations for r in valid])) if valid else math.nan,
            "convergence_rate": (len(valid) / len(matched)) if matched else math.nan,
            "rmse_m": math.nan,
        }
        if truth is not None and rows:
            ts = np.array([r.timestamp for r in rows])
            _check_time_range(path, ts, truth[:, 0])
            est = np.array([(r.x, r.y) for r in rows])
            d = polyline_distance(est, truth[:, 1:3])
            stats["rmse_m"] = float(np.sqrt(np.mean(d ** 2)))
        return stats
    if (path / "run_report.csv").exists():
        rep = read_report_csv(path / "run_report.csv")
        h = rep[:, 7]
        stats = {"frames": len(rep), "valid_frames": len(rep), "mean_align_error": math.nan,
                 "mean_iterations": math.nan, "convergence_rate": math.nan,
                 "rmse_m": float(np.sqrt(np.mean(h ** 2))) if len(h) else math.nan}
        if truth is not None and len(rep):
            _check_time_range(path, rep[:, 0], truth[:, 0])
            d = polyline_distance(rep[:, 1:3], truth[:, 1:3])
            stats["rmse_m"] = float(np.sqrt(np.mean(d ** 2)))
        return stats
    raise InputError(f"{path}: no trajectory.csv or run_report.csv")


def _frame_statuses(path: Path, n: int) -> list[str]:
    if not path.exists():
        return ["ok"] * n
    with open(path, newline="") as fh:
        statuses = [r["status"] for r in csv.DictReader(fh)]
    if len(statuses) != n:
        raise InputError(f"{path}: {len(statuses)} rows, trajectory has {n}")
    return statuses


def _check_time_range(path, ts: np.ndarray, truth_ts: np.ndarray) -> None:
    tol = 1e-6
    if ts.min() < truth_ts.min() - tol or ts.max() > truth_ts.max() + tol:
        raise InputError(f"{path}: timestamps [{ts.min():g}, {ts.max():g}] fall outside the "
                         f"truth range [{truth_ts.min():g}, {truth_ts.max():g}]")


def cmd_eval(args) -> int:
    truth = None
    if args.truth:
        try:
            truth = read_truth_csv(args.truth)
        except OSError as exc:
            raise InputError(f"cannot read truth {args.truth}: {exc.strerror}") from None
        except (ValueError, KeyError) as exc:
            raise InputError(f"{args.truth}: {exc}") from None
        if len(truth) == 0:
            raise InputError(f"{args.truth}: no rows")
    results = []
    for run in args.runs:
        try:
            results.append((run, _eval_run(Path(run), truth)))
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"{run}: {exc}") from None
    base = results[0][1]
    table = []
    for name, st in results:
        row = dict(run=name, **st)
        row["delta_align_error"] = st["mean_align_error"] - base["mean_align_error"]
        row["delta_iterations"] = st["mean_iterations"] - base["mean_iterations"]
        row["delta_rmse_m"] = st["rmse_m"] - base["rmse_m"]
        table.append(row)
    if len(table) > 1:
        med = {"run": "median"}
        for col in EVAL_COLUMNS[1:]:
            vals = np.array([r[col] for r in table], dtype=float)
            med[col] = float(np.median(vals)) if np.all(np.isfinite(vals)) else (
                float(np.median(vals[np.isfinite(vals)])) if np.any(np.isfinite(vals)) else math.nan)
        table.append(med)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_COLUMNS)
    for row in table:
        w.writerow([row["run"]] + [_fmt(row[c]) for c in EVAL_COLUMNS[1:]])
    sys.stdout.write(buf.getvalue())
    if args.out:
        try:
            Path(args.out).write_text(buf.getvalue())
        except OSError as exc:
            raise InputError(f"cannot write {args.out}: {exc}") from None
    return EXIT_OK


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(v)
    return "nan" if not math.isfinite(v) else format_number(v)


def cmd_config(args) -> int:
    sys.stdout.write(default_config_text())
    return EXIT_OK


# -- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shuttle-slam", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("slam", help="run SLAM over a frame log")
    s.add_argument("--frames", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--solver", choices=["lm", "gn_fixed"])
    s.add_argument("--iters", type=int)
    s.set_defaults(func=cmd_slam)

    s = sub.add_parser("sim", help="closed-loop path following")
    s.add_argument("--world", default="default", help="world file or 'default'")
    s.add_argument("--path", help="waypoint CSV (default: bundled loop)")
    s.add_argument("--mode", choices=[m.value for m in Mode], default="truth")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sim)

    s = sub.add_parser("gen", help="raycast a canned scenario into a frame log")
    s.add_argument("--scenario", choices=SCENARIOS, required=True)
    s.add_argument("--frames", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--truth", help="truth CSV path (default: <out>_truth.csv)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, help="range noise sigma in metres")
    s.add_argument("--config")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("eval", help="summarize and compare run outputs")
    s.add_argument("--runs", nargs="+", required=True)
    s.add_argument("--truth")
    s.add_argument("--out", help="also write the summary CSV here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("config", help="print every config key with its default")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "iters", None) is not None and args.iters < 1:
        print("error: --iters must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
