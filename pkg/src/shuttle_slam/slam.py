"""Online 2D SLAM: ground removal, projection, pyramid matching, map update."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .grid import OccupancyPyramid, UpdateModel, write_pgm
from .matcher import MatchConfig, MatchResult, Solver, match_pyramid
from .pose import PoseSE2
from .scan import (DEFAULT_BIN_WIDTH, DEFAULT_CELL_SIZE, DEFAULT_H_THRES, DEFAULT_MAX_RANGE,
                   PointCloud3D, format_number, project_to_scan, remove_ground)

log = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["timestamp_s", "x_m", "y_m", "theta_rad", "converged",
                      "align_error", "iterations"]
FRAME_COLUMNS = TRAJECTORY_COLUMNS + ["total_iterations", "n_raw", "n_kept",
                                      "n_projected", "status"]


class ConfigError(ValueError):
    pass


class FrameOrderError(ValueError):
    """Frame timestamp not after the previous one."""


@dataclass(frozen=True)
class SlamConfig:
    cell_size: float = DEFAULT_CELL_SIZE
    h_thres: float = DEFAULT_H_THRES
    bin_width: float = DEFAULT_BIN_WIDTH
    max_range: float = DEFAULT_MAX_RANGE
    finest_resolution: float = 0.05
    n_levels: int = 5
    map_size_x: float = 160.0
    map_size_y: float = 160.0
    # map centre; None puts the origin pose at the centre
    map_center_x: float | None = None
    map_center_y: float | None = None
    update: UpdateModel = field(default_factory=UpdateModel)
    match: MatchConfig = field(default_factory=MatchConfig)
    origin: PoseSE2 = PoseSE2()
    max_translation: float = 1.0
    max_rotation: float = 0.5

    def validate(self) -> None:
        if min(self.map_size_x, self.map_size_y) < 2.0 * self.max_range:
            raise ConfigError(
                f"map extent {self.map_size_x:g} x {self.map_size_y:g} m is smaller than "
                f"twice the max range ({self.max_range:g} m)")
        if self.finest_resolution <= 0 or self.n_levels < 1:
            raise ConfigError("finest_resolution must be positive and n_levels >= 1")
        if self.cell_size <= 0 or self.h_thres <= 0 or self.max_range <= 0:
            raise ConfigError("scan parameters must be positive")
        if self.max_translation <= 0 or self.max_rotation <= 0:
            raise ConfigError("motion bounds must be positive")


@dataclass(frozen=True)
class FrameReport:
    timestamp: float
    pose: PoseSE2
    converged: bool
    align_error: float
    iterations: int
    total_iterations: int
    n_raw: int
    n_kept: int
    n_projected: int
    status: str  # bootstrap | ok | not_converged | no_overlap | motion_bound


class SlamSession:
    """Single-writer SLAM state; feed frames in timestamp order."""

    def __init__(self, config: SlamConfig = SlamConfig()):
        config.validate()
        self.config = config
        origin = PoseSE2.make(*config.origin)
        cx = origin.x if config.map_center_x is None else config.map_center_x
        cy = origin.y if config.map_center_y is None else config.map_center_y
        self.pyramid = OccupancyPyramid.make(
            config.finest_resolution, config.n_levels,
            origin=(cx - config.map_size_x / 2, cy - config.map_size_y / 2),
            size_x=config.map_size_x, size_y=config.map_size_y, model=config.update)
        self.pose = origin
        self.trajectory: list[FrameReport] = []

    @property
    def last_timestamp(self) -> float | None:
        return self.trajectory[-1].timestamp if self.trajectory else None

    def process_frame(self, cloud: PointCloud3D) -> FrameReport:
        cfg = self.config
        last = self.last_timestamp
        if last is not None and not cloud.timestamp > last:
            raise FrameOrderError(f"frame t={cloud.timestamp} does not follow t={last}")
        kept = remove_ground(cloud, cfg.cell_size, cfg.h_thres)
        scan = project_to_scan(kept, cfg.bin_width, cfg.max_range)
        counts = dict(n_raw=len(cloud), n_kept=len(kept), n_projected=len(scan))

        if not self.trajectory:
            self.pyramid.update(self.pose, scan)
            report = FrameReport(cloud.timestamp, self.pose, True, 0.0, 0, 0, **counts,
                                 status="bootstrap")
            self.trajectory.append(report)
            return report

        if len(scan) == 0:
            result = MatchResult(self.pose, 0, 0.0, False, failed="no_overlap")
        else:
            result = match_pyramid(self.pyramid, scan, self.pose, cfg.match)
        status = self._gate(result)
        if status == "ok":
            self.pose = result.pose
            self.pyramid.update(self.pose, scan)
        elif status == "not_converged":
            # keep the best estimate but do not let it touch the map
            self.pose = result.pose
        else:
            log.warning("frame t=%s: %s, holding pose", cloud.timestamp, status)
        report = FrameReport(cloud.timestamp, self.pose, status == "ok",
                             result.final_alignment_error, result.iterations,
                             result.total_iterations, **counts, status=status)
        self.trajectory.append(report)
        return report

    def _gate(self, result: MatchResult) -> str:
        if result.failed == "no_overlap":
            return "no_overlap"
        d = self.pose.delta(result.pose)
        if (math.hypot(d[0], d[1]) > self.config.max_translation
                or abs(d[2]) > self.config.max_rotation):
            return "motion_bound"
        if not result.ok:
            return "not_converged"
        if self.config.match.solver is Solver.GN_FIXED:
            # the fixed-iteration baseline has no stop criterion to satisfy
            return "ok"
        return "ok" if result.converged else "not_converged"

    def run(self, frames: Iterable[PointCloud3D]) -> list[FrameReport]:
        return [self.process_frame(f) for f in frames]

    # -- export ---------------------------------------------------------

    def export(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            paths = {"trajectory": out / "trajectory.csv", "frames": out / "frames.csv"}
            with open(paths["trajectory"], "w", newline="") as fh:
                write_trajectory_csv(fh, self.trajectory)
            with open(paths["frames"], "w", newline="") as fh:
                write_frames_csv(fh, self.trajectory)
            for k, grid in enumerate(self.pyramid.levels):
                paths[f"map_level{k}"] = write_pgm(grid, out / f"map_level{k}.pgm")
        except OSError as exc:
            raise OSError(f"export to {out} failed: {exc}") from exc
        return paths


def init(config: SlamConfig = SlamConfig()) -> SlamSession:
    return SlamSession(config)


def process_frame(session: SlamSession, cloud: PointCloud3D) -> FrameReport:
    return session.process_frame(cloud)


def with_solver(config: SlamConfig, solver: str, iterations: int | None = None) -> SlamConfig:
    m = replace(config.match, solver=Solver(solver))
    if iterations is not None:
        m = replace(m, max_iterations=iterations)
    return replace(config, match=m)


def _row(r: FrameReport) -> list[str]:
    return [format_number(r.timestamp), format_number(r.pose.x), format_number(r.pose.y),
            format_number(r.pose.theta), str(int(r.converged)),
            format_number(r.align_error), str(r.iterations)]


def write_trajectory_csv(fh, reports: Iterable[FrameReport]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    for r in reports:
        w.writerow(_row(r))


def write_frames_csv(fh, reports: Iterable[FrameReport]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(FRAME_COLUMNS)
    for r in reports:
        w.writerow(_row(r) + [str(r.total_iterations), str(r.n_raw), str(r.n_kept),
                              str(r.n_projected), r.status])


@dataclass(frozen=True)
class TrajectoryRow:
    timestamp: float
    x: float
    y: float
    theta: float
    converged: bool
    align_error: float
    iterations: int


def read_trajectory_csv(path) -> list[TrajectoryRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRAJECTORY_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [TrajectoryRow(float(r["timestamp_s"]), float(r["x_m"]), float(r["y_m"]),
                              float(r["theta_rad"]), r["converged"] == "1",
                              float(r["align_error"]), int(r["iterations"]))
                for r in reader]
