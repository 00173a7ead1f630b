"""Closed-loop path following with SLAM or ground-truth localization.

The loop runs at a fixed step: each tick reads the active pose source,
computes the preview error to the reference spline, runs the PID (plus an
optional curvature feed-forward), passes the command through the 25% filter
and advances the single-track model.  In SLAM mode a LIDAR frame is rendered
from the true pose every ``lidar_period`` seconds and the SLAM estimate is
held between frames.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TextIO

import numpy as np

from .lidar import LidarModel, SensorBlocked, raycast_frame
from .pose import PoseSE2, wrap_angle
from .scan import PointCloud3D, format_number
from .slam import SlamConfig, SlamSession
from .vehicle import (COMMAND_BLEND, LateralState, OffPath, PathSpline, PIDController,
                      VehicleParams, command_filter, curvature_gain, fit_path, integrate,
                      path_error)
from .world import World, default_loop_waypoints, furnished_room, make_default_world

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["t", "X_true", "Y_true", "psi_true", "X_est", "Y_est", "psi_est",
                  "h", "y", "delta_f"]


class Mode(str, Enum):
    SLAM = "slam"
    TRUTH = "truth"


@dataclass(frozen=True)
class ControllerConfig:
    kp: float = 0.25
    ki: float = 0.02
    kd: float = 0.05
    delta_max: float = 0.5
    i_clamp: float = 0.2
    command_blend: float = COMMAND_BLEND
    # steady-state steer for the path curvature at the nearest point
    feedforward: bool = True

    def make_pid(self) -> PIDController:
        return PIDController(self.kp, self.ki, self.kd, self.delta_max, self.i_clamp)


@dataclass(frozen=True)
class SimRun:
    world: World
    waypoints: np.ndarray
    mode: Mode = Mode.TRUTH
    lidar: LidarModel = LidarModel()
    vehicle: VehicleParams = VehicleParams()
    controller: ControllerConfig = ControllerConfig()
    slam: SlamConfig = field(default_factory=SlamConfig)
    # None runs until the end of the path (bounded by a generous time cap)
    duration: float | None = None
    seed: int = 0
    dt: float = 0.01
    lidar_period: float = 0.1
    speed_tau: float = 0.5
    seg_len: int = 10
    max_path_distance: float = 10.0


@dataclass
class RunReport:
    rows: np.ndarray  # (T, len(REPORT_COLUMNS))
    failed: str | None = None
    frames: int = 0
    slam_status: dict[str, int] = field(default_factory=dict)
    completed: bool = False

    @property
    def lateral_error(self) -> np.ndarray:
        return self.rows[:, REPORT_COLUMNS.index("h")]

    @property
    def rmse(self) -> float:
        h = self.lateral_error
        return float(np.sqrt(np.mean(h ** 2))) if len(h) else 0.0

    @property
    def max_error(self) -> float:
        h = self.lateral_error
        return float(np.max(np.abs(h))) if len(h) else 0.0

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, REPORT_COLUMNS.index(name)]

    def write_csv(self, stream: TextIO) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in self.rows:
            w.writerow([format_number(v) for v in row])

    def summary(self) -> str:
        lines = [f"rmse_m = {format_number(self.rmse)}",
                 f"max_error_m = {format_number(self.max_error)}",
                 f"steps = {len(self.rows)}",
                 f"lidar_frames = {self.frames}",
                 f"completed = {int(self.completed)}",
                 f"failed = {self.failed or 'none'}"]
        lines += [f"slam_{k} = {v}" for k, v in sorted(self.slam_status.items())]
        return "\n".join(lines) + "\n"


def read_report_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != REPORT_COLUMNS:
            raise ValueError(f"{path}: not a run report (header {header})")
        rows = [[float(v) for v in r] for r in reader]
    return np.array(rows, dtype=float).reshape(-1, len(REPORT_COLUMNS))


def _start_pose(spline: PathSpline) -> PoseSE2:
    p = spline.point(0, 0.0)
    t = spline.tangent(0, 0.0)
    return PoseSE2.make(float(p[0]), float(p[1]), math.atan2(t[1], t[0]))


def _window(seg: int) -> tuple[int, int]:
    return seg - 1, seg + 3


def run_closed_loop(run: SimRun) -> RunReport:
    spline = fit_path(run.waypoints, run.seg_len)
    params, ctl = run.vehicle, run.controller
    v_cmd = params.V
    ff_gain = 1.0 / curvature_gain(params, v_cmd) if ctl.feedforward else 0.0
    pid = ctl.make_pid()
    rng = np.random.default_rng(run.seed)

    start = _start_pose(spline)
    state = LateralState(X=start.x, Y=start.y, psi=start.theta)
    V = v_cmd
    if run.duration is None:
        length = float(np.sum(np.hypot(*np.diff(spline.sample(20), axis=0).T)))
        t_end = 2.0 * length / v_cmd + 10.0
    else:
        t_end = run.duration
    n_steps = int(round(t_end / run.dt))
    lidar_every = max(1, int(round(run.lidar_period / run.dt)))

    session = None
    if run.mode is Mode.SLAM:
        session = SlamSession(replace(run.slam, origin=start))
    est = start
    seg_true = seg_est = 0
    delta = 0.0
    rows = []
    failed = None
    completed = False
    frames = 0
    for k in range(n_steps):
        t = k * run.dt
        truth = PoseSE2(state.X, state.Y, state.psi)
        if not run.world.inside_bounds(truth.x, truth.y):
            failed = "left_world"
            break
        if session is not None and k % lidar_every == 0:
            try:
                cloud = raycast_frame(run.world, truth.x, truth.y, truth.theta, run.lidar, t, rng)
            except SensorBlocked:
                failed = "collision"
                break
            est = session.process_frame(cloud).pose
            frames += 1
        elif session is None:
            est = truth
        try:
            e_true = path_error(spline, truth, params.l_s, _window(seg_true), run.max_path_distance)
            e_est = path_error(spline, est, params.l_s, _window(seg_est), run.max_path_distance)
        except OffPath as exc:
            log.warning("t=%.2f: %s", t, exc)
            failed = "off_path"
            break
        seg_true, seg_est = e_true.segment, e_est.segment
        if e_true.segment == spline.n_segments - 1 and e_true.lam >= 1.0:
            completed = True
            break

        raw = pid.step(e_est.y, run.dt) + ff_gain * e_est.curvature
        raw = min(ctl.delta_max, max(-ctl.delta_max, raw))
        delta = command_filter(delta, raw, ctl.command_blend)
        rows.append((t, truth.x, truth.y, truth.theta, est.x, est.y, est.theta,
                     e_true.h, e_est.y, delta))

        # the lateral error states are re-synchronized with the geometric truth
        state.dpsi, state.y = e_true.dpsi, e_true.y
        state = integrate(state, delta, e_true.curvature, params, V, run.dt)
        V += (v_cmd - V) * run.dt / run.speed_tau

    status: dict[str, int] = {}
    if session is not None:
        for rep in session.trajectory:
            status[rep.status] = status.get(rep.status, 0) + 1
    report = RunReport(np.array(rows, dtype=float).reshape(-1, len(REPORT_COLUMNS)),
                       failed, frames, status, completed)
    if failed:
        log.warning("run terminated early: %s", failed)
    return report


def default_run(mode: Mode | str = Mode.TRUTH, **kwargs) -> SimRun:
    """The bundled loop course at 12 km/h."""
    return SimRun(make_default_world(), default_loop_waypoints(), Mode(mode), **kwargs)


# -- scenario generation ---------------------------------------------------

SCENARIOS = ("static", "line", "room", "loop")
FRAME_PERIOD = 0.1
LINE_STEP = 0.05
ROOM_RADIUS = 1.5


def scenario_poses(name: str, n: int) -> tuple[World, np.ndarray]:
    """World and ``(n, 3)`` true sensor poses for a canned scenario.

    * ``static``: ``n`` frames at the origin of the furnished room.
    * ``line``: advances ``0.05`` m per frame along +x from the origin.
    * ``room``: 0.05 m steps around a 1.5 m radius circle (left turn).
    * ``loop``: the bundled loop course at 12 km/h and 10 Hz.
    """
    if n <= 0:
        raise ValueError("frame count must be positive")
    k = np.arange(n, dtype=float)
    if name == "static":
        return furnished_room(), np.zeros((n, 3))
    if name == "line":
        return furnished_room(), np.column_stack((LINE_STEP * k, np.zeros(n), np.zeros(n)))
    if name == "room":
        phi = k * LINE_STEP / ROOM_RADIUS
        return furnished_room(), np.column_stack((ROOM_RADIUS * np.sin(phi),
                                                  ROOM_RADIUS * (1 - np.cos(phi)), wrap_theta(phi)))
    if name == "loop":
        spline = fit_path(default_loop_waypoints(), 10)
        dense = spline.sample(200)
        arc = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(dense, axis=0).T))])
        s = np.minimum(k * VehicleParams().V * FRAME_PERIOD, arc[-1])
        x = np.interp(s, arc, dense[:, 0])
        y = np.interp(s, arc, dense[:, 1])
        heading = np.unwrap(np.arctan2(np.gradient(dense[:, 1]), np.gradient(dense[:, 0])))
        theta = wrap_theta(np.interp(s, arc, heading))
        return make_default_world(), np.column_stack((x, y, theta))
    raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")


def wrap_theta(a: np.ndarray) -> np.ndarray:
    return np.array([wrap_angle(v) for v in np.asarray(a, float)])


def relative_poses(poses: np.ndarray) -> np.ndarray:
    """Express poses in the frame of the first one (the SLAM map frame)."""
    x0, y0, t0 = poses[0]
    c, s = math.cos(t0), math.sin(t0)
    dx, dy = poses[:, 0] - x0, poses[:, 1] - y0
    return np.column_stack((c * dx + s * dy, -s * dx + c * dy, wrap_theta(poses[:, 2] - t0)))


def generate_scenario(name: str, n: int, lidar: LidarModel = LidarModel(),
                      seed: int = 0) -> tuple[list[PointCloud3D], np.ndarray]:
    """Raycast a scenario; returns frames and truth poses in the first frame's frame."""
    world, poses = scenario_poses(name, n)
    rng = np.random.default_rng(seed)
    frames = [raycast_frame(world, x, y, th, lidar, i * FRAME_PERIOD, rng)
              for i, (x, y, th) in enumerate(poses)]
    return frames, relative_poses(poses)


TRUTH_COLUMNS = ["timestamp_s", "x_m", "y_m", "theta_rad"]


def write_truth_csv(stream: TextIO, poses: np.ndarray, period: float = FRAME_PERIOD) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(TRUTH_COLUMNS)
    for i, p in enumerate(poses):
        w.writerow([format_number(i * period)] + [format_number(v) for v in p])


def read_truth_csv(path) -> np.ndarray:
    """``(N, 4)`` rows of timestamp, x, y, theta."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRUTH_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = [[float(r[c]) for c in TRUTH_COLUMNS] for r in reader]
    return np.array(rows, dtype=float).reshape(-1, 4)
