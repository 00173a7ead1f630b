"""Scan-to-map alignment by robust Levenberg-Marquardt.

The objective is the occupancy residual ``sum (1 - M(S_i(xi)))**2`` over the
scan end points ``S_i`` transformed by the pose ``xi``.  Each point's squared
contribution is capped at ``threshold**2`` (points landing in free space are
treated as outliers), which is realized in the normal equations as the
weight ``w_i = min(1, threshold**2 / r_i**2)``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TextIO

import numpy as np

from .grid import OCCUPIED_THRESHOLD, OccupancyGrid, OccupancyPyramid
from .pose import PoseSE2, transform_endpoint, transform_points, wrap_angle
from .scan import PlanarScan

__all__ = [
    "MatchConfig", "MatchResult", "NoOverlap", "PoseSE2", "Solver",
    "alignment_error", "match", "match_pyramid", "residual_and_jacobian",
    "transform_endpoint", "write_trace_csv",
]

log = logging.getLogger(__name__)

LAMBDA_MAX = 1e7


class Solver(str, Enum):
    LM = "lm"
    GN_FIXED = "gn_fixed"


class NoOverlap(RuntimeError):
    """No scan end point falls inside the interpolable map."""


@dataclass(frozen=True)
class MatchConfig:
    max_iterations: int = 10
    epsilon: float = 1e-3
    lambda_init: float = 0.01
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    threshold: float = OCCUPIED_THRESHOLD
    solver: Solver = Solver.LM
    # robust weights in GN_FIXED mode (LM always uses them)
    gn_robust: bool = False
    # "marquardt": H + lambda*diag(H); "identity": H + lambda*I
    damping: str = "marquardt"
    lambda_min: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "solver", Solver(self.solver))
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.epsilon <= 0 or self.lambda_init <= 0:
            raise ValueError("epsilon and lambda_init must be positive")
        if self.lambda_up <= 1 or self.lambda_down <= 1:
            raise ValueError("lambda factors must exceed 1")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("occupancy threshold must lie in (0, 1)")

    @property
    def robust(self) -> bool:
        return self.solver is Solver.LM or self.gn_robust


@dataclass
class TraceRow:
    iteration: int
    error: float
    step_norm: float
    lam: float
    accepted: bool


@dataclass
class MatchResult:
    pose: PoseSE2
    iterations: int
    final_alignment_error: float  # unweighted occupancy residual sum
    converged: bool
    robust_error: float = 0.0
    n_valid: int = 0
    failed: str | None = None  # "no_overlap" / "singular"
    trace: list[TraceRow] = field(default_factory=list)
    total_iterations: int = 0  # across pyramid levels
    levels: list["MatchResult"] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failed is None


def robust_weights(r: np.ndarray, threshold: float) -> np.ndarray:
    r2 = r * r
    cap = threshold * threshold
    with np.errstate(divide="ignore"):
        return np.where(r2 <= cap, 1.0, cap / np.where(r2 > 0, r2, 1.0))


def residual_and_jacobian(grid: OccupancyGrid, pose: PoseSE2, points: np.ndarray,
                          threshold: float = OCCUPIED_THRESHOLD):
    """Per-point residual ``r_i = 1 - M``, row ``J_i = grad M . dS_i/dxi`` and weight.

    ``points`` are sensor-frame end points ``(N, 2)``.  Points outside the map
    interior come back with zero residual, Jacobian and weight, and
    ``inside == False``.  Returns ``(r, J, w, inside)``.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    world = transform_points(pose, points)
    m, grad, inside = grid.interpolate_many(world)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    dx_dth = -points[:, 0] * s - points[:, 1] * c
    dy_dth = points[:, 0] * c - points[:, 1] * s
    jac = np.column_stack((grad[:, 0], grad[:, 1],
                           grad[:, 0] * dx_dth + grad[:, 1] * dy_dth))
    r = np.where(inside, 1.0 - m, 0.0)
    w = np.where(inside, robust_weights(r, threshold), 0.0)
    jac[~inside] = 0.0
    return r, jac, w, inside


def alignment_error(grid: OccupancyGrid, pose: PoseSE2, points: np.ndarray,
                    threshold: float = OCCUPIED_THRESHOLD):
    """``(plain, capped, n_inside)`` occupancy residual sums at ``pose``."""
    world = transform_points(pose, points)
    m, _, inside = grid.interpolate_many(world)
    r2 = (1.0 - m[inside]) ** 2
    return float(r2.sum()), float(np.minimum(r2, threshold ** 2).sum()), int(inside.sum())


def _scan_points(scan) -> np.ndarray:
    if isinstance(scan, PlanarScan):
        return scan.endpoints()
    return np.asarray(scan, dtype=float).reshape(-1, 2)


def match(grid: OccupancyGrid, scan, pose0: PoseSE2,
          cfg: MatchConfig = MatchConfig()) -> MatchResult:
    """Refine ``pose0`` so the scan end points land on occupied cells."""
    pts = _scan_points(scan)
    pose0 = PoseSE2.make(*pose0)
    if cfg.solver is Solver.GN_FIXED:
        return _gauss_newton_fixed(grid, pts, pose0, cfg)
    return _levenberg_marquardt(grid, pts, pose0, cfg)


def _normal_equations(grid, pts, pose, cfg, weighted: bool):
    r, jac, w, inside = residual_and_jacobian(grid, pose, pts, cfg.threshold)
    if not weighted:
        w = inside.astype(float)
    # fixed-order reductions keep results bit-reproducible
    wj = jac * w[:, None]
    hess = wj.T @ jac
    grad = wj.T @ r
    return hess, grad, int(inside.sum())


def _levenberg_marquardt(grid, pts, pose0, cfg) -> MatchResult:
    plain, robust, n = alignment_error(grid, pose0, pts, cfg.threshold)
    if n == 0:
        return MatchResult(pose0, 0, 0.0, False, 0.0, 0, failed="no_overlap")
    pose, err = pose0, robust
    lam = cfg.lambda_init
    trace: list[TraceRow] = []
    hess, grad, _ = _normal_equations(grid, pts, pose, cfg, weighted=True)
    converged = False
    failed = None
    it = 0
    while it < cfg.max_iterations:
        it += 1
        try:
            step = np.linalg.solve(_damped(hess, lam, cfg.damping), grad)
        except np.linalg.LinAlgError:
            step = None
        if step is None or not np.all(np.isfinite(step)):
            lam *= cfg.lambda_up
            trace.append(TraceRow(it, err, math.nan, lam, False))
            if lam > LAMBDA_MAX:
                failed = "singular"
                break
            continue
        norm = float(np.linalg.norm(step))
        cand = pose.shifted(step)
        c_plain, c_robust, c_n = alignment_error(grid, cand, pts, cfg.threshold)
        accepted = c_n > 0 and c_robust < err
        if accepted:
            pose, err, plain = cand, c_robust, c_plain
            lam = max(lam / cfg.lambda_down, cfg.lambda_min)
        else:
            lam = min(lam * cfg.lambda_up, LAMBDA_MAX)
        trace.append(TraceRow(it, err, norm, lam, accepted))
        if norm < cfg.epsilon:
            converged = True
            break
        if accepted:
            hess, grad, _ = _normal_equations(grid, pts, pose, cfg, weighted=True)
    plain, robust, n = alignment_error(grid, pose, pts, cfg.threshold)
    return MatchResult(pose, it, plain, converged, robust, n, failed, trace, it)


def _damped(hess: np.ndarray, lam: float, kind: str) -> np.ndarray:
    if kind == "identity":
        return hess + lam * np.eye(3)
    # axes with no information get unit damping instead of none
    d = np.diag(hess).copy()
    d[d <= 0.0] = 1.0
    return hess + lam * np.diag(d)


def _gauss_newton_fixed(grid, pts, pose0, cfg) -> MatchResult:
    """Hector-style baseline: exactly ``max_iterations`` undamped steps."""
    pose = pose0
    trace: list[TraceRow] = []
    norm = math.inf
    failed = None
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        hess, grad, n = _normal_equations(grid, pts, pose, cfg, weighted=cfg.robust)
        if n == 0:
            failed = "no_overlap"
            break
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            failed = "singular"
            break
        if not np.all(np.isfinite(step)):
            failed = "singular"
            break
        norm = float(np.linalg.norm(step))
        pose = pose.shifted(step)
        plain, robust, _ = alignment_error(grid, pose, pts, cfg.threshold)
        trace.append(TraceRow(it, plain, norm, 0.0, True))
    plain, robust, n = alignment_error(grid, pose, pts, cfg.threshold)
    if n == 0:
        failed = failed or "no_overlap"
    return MatchResult(pose, len(trace) if failed else it, plain,
                       failed is None and norm < cfg.epsilon, robust, n, failed, trace,
                       len(trace) if failed else it)


def match_pyramid(pyr: OccupancyPyramid, scan, pose0: PoseSE2,
                  cfg: MatchConfig = MatchConfig()) -> MatchResult:
    """Match coarse to fine, seeding each level with the previous estimate."""
    pts = _scan_points(scan)
    pose = PoseSE2.make(*pose0)
    results = []
    for grid in reversed(pyr.levels):
        res = match(grid, pts, pose, cfg)
        results.append(res)
        if res.ok:
            pose = res.pose
        else:
            log.debug("level res=%.3g failed (%s); passing estimate through",
                      grid.resolution, res.failed)
    finest = results[-1]
    out = MatchResult(finest.pose if finest.ok else pose, finest.iterations,
                      finest.final_alignment_error, finest.converged,
                      finest.robust_error, finest.n_valid, finest.failed, finest.trace)
    out.total_iterations = sum(r.iterations for r in results)
    out.levels = results
    return out


def write_trace_csv(stream: TextIO, result: MatchResult) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["iter", "error", "step_norm", "lambda", "accepted"])
    for row in result.trace:
        w.writerow([row.iteration, f"{row.error:.9g}", f"{row.step_norm:.9g}",
                    f"{row.lam:.9g}", int(row.accepted)])


def normalize_pose(p) -> PoseSE2:
    return PoseSE2(p[0], p[1], wrap_angle(p[2]))
