"""2D LIDAR SLAM with robust Levenberg-Marquardt scan matching, plus a
single-track vehicle path-following simulator that can localize from it."""

from .grid import OccupancyGrid, OccupancyPyramid, UpdateModel
from .matcher import MatchConfig, MatchResult, Solver, match, match_pyramid
from .pose import PoseSE2
from .scan import PlanarScan, PointCloud3D, project_to_scan, remove_ground
from .slam import SlamConfig, SlamSession
from .vehicle import PathSpline, PIDController, VehicleParams, fit_path, path_error

__version__ = "0.1.0"

__all__ = [
    "MatchConfig", "MatchResult", "OccupancyGrid", "OccupancyPyramid", "PIDController",
    "PathSpline", "PlanarScan", "PointCloud3D", "PoseSE2", "SlamConfig", "SlamSession",
    "Solver", "UpdateModel", "VehicleParams", "fit_path", "match", "match_pyramid",
    "path_error", "project_to_scan", "remove_ground",
]
