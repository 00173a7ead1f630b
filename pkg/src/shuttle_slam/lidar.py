"""Raycast emulation of a multi-channel spinning LIDAR in a :class:`World`."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scan import DEFAULT_BIN_WIDTH, DEFAULT_MAX_RANGE, PointCloud3D, bin_count
from .world import World


class SensorBlocked(RuntimeError):
    """The sensor origin lies inside an obstacle."""


@dataclass(frozen=True)
class LidarModel:
    """Channel elevations are spread evenly over ``[-fov/2, fov/2]``.

    Azimuths sit at ``-pi + k * azimuth_step`` in the sensor frame, i.e. on the
    centres of the projection bins when ``azimuth_step`` equals the scan bin
    width.
    """

    channels: int = 16
    vertical_fov: float = math.radians(30.0)
    azimuth_step: float = DEFAULT_BIN_WIDTH
    max_range: float = DEFAULT_MAX_RANGE
    range_noise: float = 0.0
    mount_height: float = 1.8

    def __post_init__(self):
        if self.channels < 1 or self.max_range <= 0 or self.mount_height <= 0:
            raise ValueError("invalid LIDAR model")
        bin_count(self.azimuth_step)

    @property
    def elevations(self) -> np.ndarray:
        if self.channels == 1:
            return np.zeros(1)
        return np.linspace(-self.vertical_fov / 2, self.vertical_fov / 2, self.channels)

    @property
    def azimuths(self) -> np.ndarray:
        return -math.pi + self.azimuth_step * np.arange(bin_count(self.azimuth_step))


def _entry_exit(world: World, x: float, y: float, angles: np.ndarray):
    """Horizontal ray/footprint clipping.

    Returns ``(t_in, t_out)`` of shape ``(n_obstacles, n_azimuths)`` giving the
    horizontal distances where each ray is inside each footprint (empty when
    ``t_in > t_out``).
    """
    d = np.column_stack((np.cos(angles), np.sin(angles)))
    t_in = np.zeros((len(world.obstacles), len(angles)))
    t_out = np.full_like(t_in, np.inf)
    origin = np.array([x, y])
    for k, ob in enumerate(world.obstacles):
        lo = np.full(len(angles), -np.inf)
        hi = np.full(len(angles), np.inf)
        for a, b in ob.edges:
            e = b - a
            normal = np.array([e[1], -e[0]])  # outward for CCW footprints
            num = normal @ (a - origin)      # >0 when the origin is inside this half-plane
            den = d @ normal
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                t = num / den
            entering = den < 0
            leaving = den > 0
            lo = np.where(entering, np.maximum(lo, t), lo)
            hi = np.where(leaving, np.minimum(hi, t), hi)
            parallel_out = (den == 0) & (num < 0)
            hi = np.where(parallel_out, -np.inf, hi)
        t_in[k] = lo
        t_out[k] = hi
    return t_in, t_out


def raycast_frame(world: World, x: float, y: float, yaw: float, lidar: LidarModel = LidarModel(),
                  timestamp: float = 0.0, rng: np.random.Generator | None = None) -> PointCloud3D:
    """Render one sweep from a sensor at ``(x, y)`` heading ``yaw``.

    Points are returned in the sensor frame (x forward, z up, origin at the
    sensor).  Rays with no hit within ``max_range`` (slant) produce no point.
    """
    h = lidar.mount_height
    if world.blocked(x, y, h):
        raise SensorBlocked(f"sensor at ({x:.3f}, {y:.3f}) is inside an obstacle")
    az = lidar.azimuths
    el = lidar.elevations
    t_in, t_out = _entry_exit(world, x, y, az + yaw)
    tan_e = np.tan(el)
    cos_e = np.cos(el)

    # horizontal hit distance per (channel, azimuth); start with the ground
    best = np.full((len(el), len(az)), np.inf)
    down = tan_e < 0
    best[down] = np.broadcast_to((h / -tan_e[down])[:, None], (int(down.sum()), len(az)))
    up, level = tan_e > 0, tan_e == 0
    safe = np.where(level, 1.0, tan_e)
    for k, ob in enumerate(world.obstacles):
        # horizontal distances where the ray height h + t*tan(e) lies in [0, height]
        t_lo = np.where(up, -h / safe, (ob.height - h) / safe)
        t_hi = np.where(up, (ob.height - h) / safe, -h / safe)
        level_hits = h <= ob.height
        t_lo = np.where(level, -np.inf if level_hits else np.inf, t_lo)
        t_hi = np.where(level, np.inf, t_hi)
        enter = np.maximum(np.maximum(t_in[k][None, :], t_lo[:, None]), 0.0)
        leave = np.minimum(t_out[k][None, :], t_hi[:, None])
        hit = enter <= leave
        best = np.where(hit & (enter < best), enter, best)

    slant = best / cos_e[:, None]
    ok = np.isfinite(best) & (slant <= lidar.max_range)
    ci, ai = np.nonzero(ok)
    t = best[ci, ai]
    if lidar.range_noise > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        s = slant[ci, ai]
        t = t * (s + rng.normal(0.0, lidar.range_noise, size=len(s))) / s
    pts = np.column_stack((t * np.cos(az[ai]), t * np.sin(az[ai]), t * tan_e[ci]))
    return PointCloud3D(timestamp, pts)
