"""Standard displaced-scan suites for scan-matcher evaluation.

A map of the furnished room is built from a handful of raycast scans; each
trial renders a scan at a random true pose inside the room and starts the
matcher from a pose displaced by a fixed offset with random signs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import OccupancyGrid, OccupancyPyramid
from .lidar import LidarModel, raycast_frame
from .pose import PoseSE2
from .scan import PlanarScan, project_to_scan, remove_ground
from .world import World, furnished_room

ROOM_RANGE = 30.0
MAP_POSES = ((0.0, 0.0, 0.0), (0.5, 0.3, 0.2), (-1.0, 0.5, -0.3), (1.0, -1.0, 0.5))


@dataclass(frozen=True)
class Trial:
    truth: PoseSE2
    scan: PlanarScan
    start: PoseSE2


def room_scan(pose, world: World | None = None, lidar: LidarModel | None = None) -> PlanarScan:
    world = furnished_room() if world is None else world
    lidar = LidarModel(max_range=ROOM_RANGE) if lidar is None else lidar
    x, y, th = pose
    cloud = raycast_frame(world, x, y, th, lidar)
    return project_to_scan(remove_ground(cloud), max_range=lidar.max_range)


def room_grid(resolution: float = 0.1) -> OccupancyGrid:
    grid = OccupancyGrid.covering(resolution, (-20.0, -20.0), 40.0, 40.0)
    world = furnished_room()
    for p in MAP_POSES:
        grid.update_with_scan(PoseSE2(*p), room_scan(p, world))
    return grid


def room_pyramid(finest: float = 0.05, n_levels: int = 5) -> OccupancyPyramid:
    pyr = OccupancyPyramid.make(finest, n_levels, origin=(-20.0, -20.0), size_x=40.0, size_y=40.0)
    world = furnished_room()
    for p in MAP_POSES:
        pyr.update(PoseSE2(*p), room_scan(p, world))
    return pyr


def displaced_trials(n: int, seed: int = 7, dx: float = 0.2, dy: float = 0.1,
                     dtheta: float = math.radians(5.0)) -> list[Trial]:
    """Offsets ``(+-dx, +-dy, +-dtheta)`` with independent random signs."""
    rng = np.random.default_rng(seed)
    world = furnished_room()
    trials = []
    for _ in range(n):
        truth = PoseSE2.make(rng.uniform(-1.5, 1.5), rng.uniform(-1.0, 1.0),
                             rng.uniform(-math.pi, math.pi))
        sx, sy, st = rng.choice([-1, 1], 3)
        start = PoseSE2.make(truth.x + dx * sx, truth.y + dy * sy, truth.theta + dtheta * st)
        trials.append(Trial(truth, room_scan(truth, world), start))
    return trials


def large_displacement_trials(n: int, seed: int = 3, distance: float = 0.5,
                              dtheta: float = math.radians(10.0)) -> list[Trial]:
    """Translation of fixed length in a random direction plus a +-dtheta turn."""
    rng = np.random.default_rng(seed)
    world = furnished_room()
    trials = []
    for _ in range(n):
        truth = PoseSE2.make(rng.uniform(-1.5, 1.5), rng.uniform(-1.0, 1.0),
                             rng.uniform(-math.pi, math.pi))
        scan = room_scan(truth, world)
        a = rng.uniform(0.0, 2.0 * math.pi)
        start = PoseSE2.make(truth.x + distance * math.cos(a), truth.y + distance * math.sin(a),
                             truth.theta + dtheta * rng.choice([-1, 1]))
        trials.append(Trial(truth, scan, start))
    return trials


def within(truth: PoseSE2, estimate: PoseSE2, xy: float = 0.02,
           theta: float = math.radians(0.5)) -> bool:
    d = truth.delta(estimate)
    return abs(d[0]) < xy and abs(d[1]) < xy and abs(d[2]) < theta
