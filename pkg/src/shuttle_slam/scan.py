"""Point cloud ingestion, ground removal and planar projection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, TextIO

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_CELL_SIZE = 0.2
DEFAULT_H_THRES = 0.3
DEFAULT_BIN_WIDTH = math.radians(0.25)
DEFAULT_MAX_RANGE = 80.0


class InvalidFrameError(ValueError):
    """A point cloud frame that cannot be processed."""


class FrameLogError(ValueError):
    """Malformed frame log text; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class PointCloud3D:
    """One LIDAR sweep: an ``(N, 3)`` array of sensor-frame points in meters."""

    timestamp: float
    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.points)):
            bad = int(np.flatnonzero(~np.isfinite(self.points).all(axis=1))[0])
            raise InvalidFrameError(
                f"frame t={self.timestamp}: non-finite coordinate at point {bad}")


@dataclass(frozen=True)
class HeightGrid:
    """Per-cell height extent of a cloud on a square x-y lattice.

    ``cell_of[i]`` is the row of ``cells`` holding point ``i``; cells are
    half-open, so a point on an edge belongs to the floor-divided index.
    """

    cell_size: float
    cells: np.ndarray  # (K, 2) integer cell indices
    z_min: np.ndarray
    z_max: np.ndarray
    cell_of: np.ndarray

    @classmethod
    def build(cls, points: np.ndarray, cell_size: float) -> "HeightGrid":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        ij = np.floor(pts[:, :2] / cell_size).astype(np.int64)
        if len(ij) == 0:
            empty = np.zeros(0)
            return cls(cell_size, np.zeros((0, 2), np.int64), empty, empty,
                       np.zeros(0, np.int64))
        cells, cell_of = np.unique(ij, axis=0, return_inverse=True)
        cell_of = cell_of.reshape(-1)
        z_min = np.full(len(cells), np.inf)
        z_max = np.full(len(cells), -np.inf)
        np.minimum.at(z_min, cell_of, pts[:, 2])
        np.maximum.at(z_max, cell_of, pts[:, 2])
        return cls(cell_size, cells, z_min, z_max, cell_of)

    @property
    def spread(self) -> np.ndarray:
        return self.z_max - self.z_min


def remove_ground(cloud: PointCloud3D, cell_size: float = DEFAULT_CELL_SIZE,
                  h_thres: float = DEFAULT_H_THRES) -> PointCloud3D:
    """Keep the points of every cell whose height spread is at least ``h_thres``.

    Points are filtered, never modified, and keep their input order.
    """
    if cell_size <= 0 or h_thres <= 0:
        raise ValueError("cell_size and h_thres must be positive")
    cloud.validate()
    if len(cloud) == 0:
        return cloud
    hg = HeightGrid.build(cloud.points, cell_size)
    keep_cell = hg.spread >= h_thres
    return PointCloud3D(cloud.timestamp, cloud.points[keep_cell[hg.cell_of]])


@dataclass(frozen=True)
class PlanarScan:
    """Minimum range per bearing bin; EMPTY bins hold NaN.

    Bin ``k`` is centred on bearing ``-pi + k * bin_width`` and covers half a
    bin either side, so bearing 0 falls on the centre of bin ``n_bins // 2``.
    """

    timestamp: float
    bin_width: float
    ranges: np.ndarray = field(repr=False)

    @property
    def n_bins(self) -> int:
        return len(self.ranges)

    @property
    def bearings(self) -> np.ndarray:
        return -math.pi + self.bin_width * np.arange(self.n_bins)

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.ranges)

    def __len__(self) -> int:
        return int(np.count_nonzero(self.valid))

    def endpoints(self) -> np.ndarray:
        """Cartesian ``(M, 2)`` end points of the non-EMPTY beams."""
        ok = self.valid
        b = self.bearings[ok]
        r = self.ranges[ok]
        return np.column_stack((r * np.cos(b), r * np.sin(b)))

    @classmethod
    def empty(cls, timestamp: float = 0.0, bin_width: float = DEFAULT_BIN_WIDTH) -> "PlanarScan":
        return cls(timestamp, bin_width, np.full(bin_count(bin_width), np.nan))


def bin_count(bin_width: float) -> int:
    n = 2.0 * math.pi / bin_width
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-6 * max(1.0, n):
        raise ValueError(f"bin width {bin_width} does not divide 2*pi into whole bins")
    return k


def bin_index(bearing: np.ndarray, bin_width: float) -> np.ndarray:
    n = bin_count(bin_width)
    return np.rint((np.asarray(bearing) + math.pi) / bin_width).astype(np.int64) % n


def project_to_scan(cloud: PointCloud3D, bin_width: float = DEFAULT_BIN_WIDTH,
                    max_range: float = DEFAULT_MAX_RANGE) -> PlanarScan:
    """Collapse a (ground-filtered) cloud to the nearest return per bearing bin."""
    n = bin_count(bin_width)
    ranges = np.full(n, np.inf)
    pts = cloud.points
    if len(pts):
        rng = np.hypot(pts[:, 0], pts[:, 1])
        at_origin = rng == 0.0
        if at_origin.any():
            log.warning("frame t=%s: skipped %d point(s) at the sensor origin",
                        cloud.timestamp, int(at_origin.sum()))
        keep = ~at_origin & (rng <= max_range)
        alpha = np.arctan2(pts[keep, 1], pts[keep, 0])
        np.minimum.at(ranges, bin_index(alpha, bin_width), rng[keep])
    ranges[np.isinf(ranges)] = np.nan
    return PlanarScan(cloud.timestamp, bin_width, ranges)


# -- frame log I/O ---------------------------------------------------------

def format_number(v: float) -> str:
    return f"{v:.9g}"


def write_frames(stream: TextIO, frames: Iterable[PointCloud3D]) -> None:
    for frame in frames:
        stream.write(f"FRAME {format_number(frame.timestamp)} {len(frame)}\n")
        for x, y, z in frame.points:
            stream.write(f"{format_number(x)} {format_number(y)} {format_number(z)}\n")


def read_frames(stream: TextIO) -> Iterator[PointCloud3D]:
    """Parse ``FRAME <t> <n>`` records; raises :class:`FrameLogError`."""
    lines = enumerate(stream, start=1)
    for lineno, line in lines:
        parts = line.split()
        if not parts:
            continue
        if parts[0] != "FRAME" or len(parts) != 3:
            raise FrameLogError(f"expected 'FRAME <timestamp> <n_points>', got {line.strip()!r}", lineno)
        try:
            t = float(parts[1])
            n = int(parts[2])
        except ValueError:
            raise FrameLogError(f"bad frame header {line.strip()!r}", lineno) from None
        if n < 0:
            raise FrameLogError("negative point count", lineno)
        pts = np.empty((n, 3))
        for k in range(n):
            try:
                lineno, line = next(lines)
            except StopIteration:
                raise FrameLogError(f"frame truncated after {k} of {n} points", lineno) from None
            fields = line.split()
            if len(fields) != 3:
                raise FrameLogError(f"expected 'x y z', got {line.strip()!r}", lineno)
            try:
                pts[k] = [float(v) for v in fields]
            except ValueError:
                raise FrameLogError(f"bad coordinate in {line.strip()!r}", lineno) from None
            if not np.all(np.isfinite(pts[k])):
                raise FrameLogError(f"non-finite coordinate in {line.strip()!r}", lineno)
        yield PointCloud3D(t, pts)
