"""Planar rigid transforms."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


def wrap_angles(a: np.ndarray) -> np.ndarray:
    w = np.remainder(np.asarray(a) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w <= -np.pi, np.pi, w)


class PoseSE2(NamedTuple):
    """``(x, y, theta)``; meters and radians, theta kept in (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    @classmethod
    def make(cls, x: float, y: float, theta: float) -> "PoseSE2":
        if not all(math.isfinite(v) for v in (x, y, theta)):
            raise ValueError(f"non-finite pose ({x}, {y}, {theta})")
        return cls(float(x), float(y), wrap_angle(float(theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def shifted(self, delta) -> "PoseSE2":
        """Additive update ``xi + delta`` (not composition)."""
        dx, dy, dth = delta
        return PoseSE2.make(self.x + dx, self.y + dy, self.theta + dth)

    def delta(self, other: "PoseSE2") -> np.ndarray:
        """``other - self`` with the angle difference wrapped."""
        return np.array([other.x - self.x, other.y - self.y,
                         wrap_angle(other.theta - self.theta)])


def transform_points(pose: PoseSE2, pts: np.ndarray) -> np.ndarray:
    """Map sensor-frame ``(N, 2)`` points into the world frame."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    return np.column_stack((c * pts[:, 0] - s * pts[:, 1] + pose.x,
                            s * pts[:, 0] + c * pts[:, 1] + pose.y))


def transform_endpoint(pose: PoseSE2, s) -> np.ndarray:
    return transform_points(pose, np.asarray(s, dtype=float))[0]
