"""2.5D synthetic worlds: flat ground plus vertical convex prisms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class WorldFileError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Prism:
    """Convex footprint (CCW ``(K, 2)`` vertices) extruded from z=0 to ``height``."""

    footprint: np.ndarray = field(repr=False)
    height: float
    source: str = ""

    def __post_init__(self):
        fp = np.asarray(self.footprint, dtype=float).reshape(-1, 2)
        if len(fp) < 3:
            raise ValueError("footprint needs at least 3 vertices")
        area = _signed_area(fp)
        if abs(area) < 1e-12:
            raise ValueError("degenerate footprint")
        if area < 0:
            fp = fp[::-1].copy()
        if self.height <= 0:
            raise ValueError("obstacle height must be positive")
        object.__setattr__(self, "footprint", fp)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Footprint membership (boundary counts as inside)."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        inside = np.ones(len(pts), bool)
        fp = self.footprint
        for a, b in zip(fp, np.roll(fp, -1, axis=0)):
            e = b - a
            inside &= (e[0] * (pts[:, 1] - a[1]) - e[1] * (pts[:, 0] - a[0])) >= -1e-12
        return inside

    @property
    def edges(self) -> np.ndarray:
        """``(K, 2, 2)`` array of (start, end) pairs."""
        return np.stack((self.footprint, np.roll(self.footprint, -1, axis=0)), axis=1)


def box(cx: float, cy: float, w: float, h: float, height: float) -> Prism:
    hw, hh = w / 2.0, h / 2.0
    fp = [(cx - hw, cy - hh), (cx + hw, cy - hh), (cx + hw, cy + hh), (cx - hw, cy + hh)]
    return Prism(np.array(fp), height, f"BOX {cx:.9g} {cy:.9g} {w:.9g} {h:.9g} {height:.9g}")


def wall(x1: float, y1: float, x2: float, y2: float, thickness: float, height: float) -> Prism:
    d = np.array([x2 - x1, y2 - y1], float)
    length = float(np.hypot(*d))
    if length == 0 or thickness <= 0:
        raise ValueError("wall needs a nonzero length and thickness")
    n = np.array([-d[1], d[0]]) / length * (thickness / 2.0)
    a, b = np.array([x1, y1], float), np.array([x2, y2], float)
    return Prism(np.array([a - n, b - n, b + n, a + n]), height,
                 f"WALL {x1:.9g} {y1:.9g} {x2:.9g} {y2:.9g} {thickness:.9g} {height:.9g}")


@dataclass(frozen=True)
class World:
    obstacles: tuple[Prism, ...]

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """``(xmin, ymin, xmax, ymax)`` of all footprints."""
        allp = np.vstack([o.footprint for o in self.obstacles])
        lo, hi = allp.min(axis=0), allp.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def inside_bounds(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= x <= x1 and y0 <= y <= y1

    def blocked(self, x: float, y: float, z: float = 0.0) -> bool:
        """True when ``(x, y, z)`` lies inside some obstacle."""
        p = np.array([[x, y]])
        return any(z <= o.height and o.contains(p)[0] for o in self.obstacles)

    def to_text(self) -> str:
        return "".join(o.source + "\n" for o in self.obstacles)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def parse_world(text: str) -> World:
    """Parse ``BOX cx cy w h height`` / ``WALL x1 y1 x2 y2 thickness height`` lines."""
    obstacles = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *args = line.split()
        try:
            vals = [float(a) for a in args]
        except ValueError:
            raise WorldFileError(f"non-numeric field in {raw.strip()!r}", lineno) from None
        try:
            if kind == "BOX" and len(vals) == 5:
                obstacles.append(box(*vals))
            elif kind == "WALL" and len(vals) == 6:
                obstacles.append(wall(*vals))
            else:
                raise WorldFileError(f"unknown obstacle record {raw.strip()!r}", lineno)
        except ValueError as exc:
            if isinstance(exc, WorldFileError):
                raise
            raise WorldFileError(str(exc), lineno) from None
    if not obstacles:
        raise WorldFileError("world has no obstacles", 0)
    return World(tuple(obstacles))


def load_world(path) -> World:
    return parse_world(Path(path).read_text())


def _signed_area(fp: np.ndarray) -> float:
    x, y = fp[:, 0], fp[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


# -- bundled scenes --------------------------------------------------------

def square_room(half_x: float = 5.0, half_y: float = 5.0, center=(0.0, 0.0),
                wall_height: float = 3.0, thickness: float = 0.2) -> World:
    """Closed rectangular room; the inner wall faces sit at ``center +- half``."""
    cx, cy = center
    t = thickness
    x0, x1 = cx - half_x - t / 2, cx + half_x + t / 2
    y0, y1 = cy - half_y - t / 2, cy + half_y + t / 2
    return World((
        wall(x0, y0, x1, y0, t, wall_height),
        wall(x1, y0, x1, y1, t, wall_height),
        wall(x1, y1, x0, y1, t, wall_height),
        wall(x0, y1, x0, y0, t, wall_height),
    ))


def furnished_room() -> World:
    """Irregular 12 x 9 m room with a few interior boxes, walls off the cell lattice."""
    shell = square_room(6.013, 4.487, center=(0.0, 0.0), wall_height=3.0)
    return World(shell.obstacles + (
        box(3.61, 2.27, 1.13, 0.71, 1.5),
        box(-3.37, -2.13, 0.93, 1.37, 2.0),
        box(-2.9, 2.9, 0.6, 0.6, 1.2),
        wall(1.2, -4.49, 2.9, -2.7, 0.15, 2.5),
    ))


LOOP_TURN_RADIUS = 10.0


def make_default_world() -> World:
    """60 x 40 m fenced course around a building block.

    The bundled loop path (:func:`default_loop_waypoints`) circles the block
    with two 180-degree turns of radius 10 m; the south straight runs through
    an open field bounded only by the fence.
    """
    fence = 2.0
    obstacles = [
        wall(0.0, 0.0, 60.0, 0.0, 0.3, fence),
        wall(60.0, 0.0, 60.0, 40.0, 0.3, fence),
        wall(60.0, 40.0, 0.0, 40.0, 0.3, fence),
        wall(0.0, 40.0, 0.0, 0.0, 0.3, fence),
        box(30.0, 20.0, 20.0, 6.0, 8.0),             # building block
        box(21.7, 25.9, 3.1, 1.9, 3.0),              # annex
        box(38.3, 14.3, 2.3, 2.3, 2.5),              # shed
        box(47.1, 36.2, 4.4, 1.9, 1.6),              # parked car
        box(12.6, 36.6, 1.9, 4.2, 1.6),              # parked car
        box(53.9, 5.1, 1.3, 1.3, 1.0),               # bollard cluster
        wall(4.0, 4.0, 9.0, 2.0, 0.3, 2.5),          # oblique retaining wall
        wall(52.0, 30.0, 56.5, 33.5, 0.3, 2.5),
        box(8.5, 20.3, 1.1, 1.1, 3.5),               # hairpin sign posts
        box(51.5, 19.7, 1.1, 1.1, 3.5),
    ]
    return World(tuple(obstacles))


def default_loop_waypoints(spacing: float = 1.0) -> np.ndarray:
    """Counter-clockwise loop waypoints starting at (15, 10) heading +x."""
    r = LOOP_TURN_RADIUS
    pts = []

    def straight(a, b):
        a, b = np.asarray(a, float), np.asarray(b, float)
        n = max(1, int(round(np.hypot(*(b - a)) / spacing)))
        for k in range(n):
            pts.append(a + (b - a) * k / n)

    def arc(center, start_angle):
        n = max(1, int(round(math.pi * r / spacing)))
        for k in range(n):
            ang = start_angle + math.pi * k / n
            pts.append((center[0] + r * math.cos(ang), center[1] + r * math.sin(ang)))

    straight((15.0, 10.0), (45.0, 10.0))
    arc((45.0, 20.0), -math.pi / 2)
    straight((45.0, 30.0), (15.0, 30.0))
    arc((15.0, 20.0), math.pi / 2)
    pts.append((15.0, 10.0))
    return np.array(pts, dtype=float)
