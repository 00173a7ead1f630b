"""Log-odds occupancy grids with bilinear interpolation, and resolution pyramids.

Cell ``(i, j)`` covers ``[ox + i*res, ox + (i+1)*res) x [oy + j*res, ...)``.
For interpolation its occupancy value is treated as a sample located at the
cell centre, and four neighbouring centres span each bilinear patch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .pose import PoseSE2, transform_points
from .scan import PlanarScan

OCCUPIED_THRESHOLD = 0.5


@dataclass(frozen=True)
class UpdateModel:
    """Additive log-odds increments and clamp bounds."""

    l_hit: float = 0.9
    l_miss: float = -0.4
    l_min: float = -4.0
    l_max: float = 4.0

    def __post_init__(self):
        if not self.l_min < 0.0 < self.l_max:
            raise ValueError("log-odds clamp must straddle 0")


class InterpResult(NamedTuple):
    value: float
    gradient: np.ndarray  # (dM/dx, dM/dy), 1/m


class OutOfBounds(ValueError):
    """Point too close to (or beyond) the grid edge to interpolate."""


@dataclass
class OccupancyGrid:
    resolution: float
    origin: tuple[float, float]
    width: int
    height: int
    model: UpdateModel = field(default_factory=UpdateModel)
    logodds: np.ndarray = field(default=None, repr=False)  # (height, width)

    def __post_init__(self):
        if self.resolution <= 0 or self.width < 2 or self.height < 2:
            raise ValueError("grid needs a positive resolution and at least 2x2 cells")
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        if self.logodds is None:
            self.logodds = np.zeros((self.height, self.width))
        elif self.logodds.shape != (self.height, self.width):
            raise ValueError("log-odds array shape does not match width/height")

    @classmethod
    def covering(cls, resolution: float, origin, size_x: float, size_y: float,
                 model: UpdateModel | None = None) -> "OccupancyGrid":
        nx = int(math.ceil(size_x / resolution - 1e-9))
        ny = int(math.ceil(size_y / resolution - 1e-9))
        return cls(resolution, origin, nx, ny, model or UpdateModel())

    @classmethod
    def from_probabilities(cls, prob: np.ndarray, resolution: float, origin,
                           model: UpdateModel | None = None) -> "OccupancyGrid":
        """Wrap a ``(height, width)`` probability array, e.g. a synthetic map.

        Values are stored as unclamped log-odds, so 0 and 1 survive exactly.
        """
        prob = np.asarray(prob, dtype=float)
        if np.any((prob < 0) | (prob > 1)):
            raise ValueError("probabilities must lie in [0, 1]")
        with np.errstate(divide="ignore"):
            lo = np.log(prob) - np.log1p(-prob)
        ny, nx = prob.shape
        return cls(resolution, origin, nx, ny, model or UpdateModel(), lo)

    # -- views ----------------------------------------------------------

    @property
    def probabilities(self) -> np.ndarray:
        return _sigmoid(self.logodds)

    def occupied(self, threshold: float = OCCUPIED_THRESHOLD) -> np.ndarray:
        return self.probabilities > threshold

    def cell_of(self, pts: np.ndarray) -> np.ndarray:
        """Integer ``(N, 2)`` ``(i, j)`` cell indices (may fall outside)."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        rel = (pts - np.asarray(self.origin)) / self.resolution
        return np.floor(rel).astype(np.int64)

    def cell_center(self, i, j) -> np.ndarray:
        return np.column_stack((self.origin[0] + (np.asarray(i) + 0.5) * self.resolution,
                                self.origin[1] + (np.asarray(j) + 0.5) * self.resolution))

    def in_grid(self, ij: np.ndarray) -> np.ndarray:
        return ((ij[:, 0] >= 0) & (ij[:, 0] < self.width)
                & (ij[:, 1] >= 0) & (ij[:, 1] < self.height))

    # -- interpolation --------------------------------------------------

    def interpolate_many(self, pts: np.ndarray):
        """Bilinear value and gradient at many points.

        Returns ``(values, gradients, inside)``; entries for points outside the
        interpolable interior are zero and flagged ``False`` in ``inside``.
        """
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        res = self.resolution
        u = (pts[:, 0] - self.origin[0]) / res - 0.5
        v = (pts[:, 1] - self.origin[1]) / res - 0.5
        finite = np.isfinite(u) & np.isfinite(v)
        u = np.where(finite, u, -1.0)
        v = np.where(finite, v, -1.0)
        i0 = np.floor(u).astype(np.int64)
        j0 = np.floor(v).astype(np.int64)
        inside = (finite & (i0 >= 0) & (i0 < self.width - 1)
                  & (j0 >= 0) & (j0 < self.height - 1))
        values = np.zeros(len(pts))
        grads = np.zeros((len(pts), 2))
        if not inside.any():
            return values, grads, inside
        i0, j0 = i0[inside], j0[inside]
        fx = u[inside] - i0
        fy = v[inside] - j0
        lo = self.logodds
        m00 = _sigmoid(lo[j0, i0])
        m10 = _sigmoid(lo[j0, i0 + 1])
        m01 = _sigmoid(lo[j0 + 1, i0])
        m11 = _sigmoid(lo[j0 + 1, i0 + 1])
        values[inside] = (fy * (fx * m11 + (1 - fx) * m01)
                          + (1 - fy) * (fx * m10 + (1 - fx) * m00))
        grads[inside, 0] = (fy * (m11 - m01) + (1 - fy) * (m10 - m00)) / res
        grads[inside, 1] = (fx * (m11 - m10) + (1 - fx) * (m01 - m00)) / res
        return values, grads, inside

    def interpolate(self, p) -> InterpResult:
        values, grads, inside = self.interpolate_many(np.asarray(p, dtype=float))
        if not inside[0]:
            raise OutOfBounds(f"point {tuple(p)} outside the interpolable grid interior")
        return InterpResult(float(values[0]), grads[0].copy())

    # -- map update -----------------------------------------------------

    def update_with_scan(self, pose: PoseSE2, scan: PlanarScan) -> None:
        """Integrate one registered scan.

        Per scan every touched cell changes at most once: end-point cells get
        ``l_hit``, cells crossed on the way get ``l_miss`` unless they are an
        end point of this scan.  Beams leaving the grid are truncated.
        """
        ends = transform_points(pose, scan.endpoints())
        if len(ends) == 0:
            return
        start = self.cell_of(np.array([pose.x, pose.y]))[0]
        end_ij = self.cell_of(ends)
        hit = end_ij[self.in_grid(end_ij)]
        hit_flat = np.unique(hit[:, 1] * self.width + hit[:, 0])

        miss_ij = _trace_cells(start, end_ij)
        miss_ij = miss_ij[self.in_grid(miss_ij)]
        miss_flat = np.unique(miss_ij[:, 1] * self.width + miss_ij[:, 0])
        miss_flat = np.setdiff1d(miss_flat, hit_flat, assume_unique=True)

        m = self.model
        flat = self.logodds.reshape(-1)
        flat[hit_flat] = np.clip(flat[hit_flat] + m.l_hit, m.l_min, m.l_max)
        flat[miss_flat] = np.clip(flat[miss_flat] + m.l_miss, m.l_min, m.l_max)


def _sigmoid(lo: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-lo))


def _trace_cells(start: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Cells from ``start`` toward each end cell, end cells excluded.

    Digital line walk: ``n = max(|di|, |dj|)`` steps, step ``k`` visits
    ``start + round(k * d / n)``.
    """
    d = ends - start
    n = np.max(np.abs(d), axis=1)
    n_total = int(n.sum())
    if n_total == 0:
        return np.zeros((0, 2), np.int64)
    beam = np.repeat(np.arange(len(d)), n)
    k = np.arange(n_total) - np.repeat(np.cumsum(n) - n, n)
    t = k / n[beam]
    ci = start[0] + np.rint(t * d[beam, 0]).astype(np.int64)
    cj = start[1] + np.rint(t * d[beam, 1]).astype(np.int64)
    return np.column_stack((ci, cj))


def update_with_scan(grid: OccupancyGrid, pose: PoseSE2, scan: PlanarScan) -> None:
    grid.update_with_scan(pose, scan)


def interpolate(grid: OccupancyGrid, p) -> InterpResult:
    return grid.interpolate(p)


@dataclass
class OccupancyPyramid:
    """Levels ordered fine to coarse; level ``k`` has ``2**k`` times the cell size."""

    levels: list[OccupancyGrid]

    @classmethod
    def make(cls, finest_resolution: float = 0.05, n_levels: int = 5,
             origin=(0.0, 0.0), size_x: float = 160.0, size_y: float = 160.0,
             model: UpdateModel | None = None) -> "OccupancyPyramid":
        if n_levels < 1:
            raise ValueError("need at least one pyramid level")
        model = model or UpdateModel()
        return cls([OccupancyGrid.covering(finest_resolution * 2 ** k, origin, size_x, size_y, model)
                    for k in range(n_levels)])

    @property
    def resolutions(self) -> list[float]:
        return [g.resolution for g in self.levels]

    def update(self, pose: PoseSE2, scan: PlanarScan) -> None:
        for grid in self.levels:
            grid.update_with_scan(pose, scan)


def update_pyramid(pyr: OccupancyPyramid, pose: PoseSE2, scan: PlanarScan) -> None:
    pyr.update(pose, scan)


# -- export ----------------------------------------------------------------

def write_pgm(grid: OccupancyGrid, path, threshold: float = OCCUPIED_THRESHOLD) -> Path:
    """Plain PGM (P2), top row = largest y, plus a ``.meta`` sidecar."""
    path = Path(path)
    gray = np.rint(255.0 * (1.0 - grid.probabilities)).astype(int)[::-1]
    rows = "\n".join(" ".join(map(str, row)) for row in gray)
    path.write_text(f"P2\n{grid.width} {grid.height}\n255\n{rows}\n")
    meta = path.with_suffix(".meta")
    meta.write_text(
        f"resolution = {grid.resolution:.9g}\n"
        f"origin_x = {grid.origin[0]:.9g}\n"
        f"origin_y = {grid.origin[1]:.9g}\n"
        f"width = {grid.width}\n"
        f"height = {grid.height}\n"
        f"occupied_threshold = {threshold:.9g}\n"
        "row_order = top_is_max_y\n")
    return path


def read_pgm(path) -> np.ndarray:
    """Gray values of a plain PGM, rows flipped back so row 0 is the smallest y."""
    tokens = [t for line in Path(path).read_text().splitlines()
              if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.array(tokens[4:4 + w * h], dtype=int).reshape(h, w)
    return data[::-1]
