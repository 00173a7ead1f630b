"""Flat ``key = value`` configuration files.

Every key is optional.  Values are type-checked by kind:

* ``length`` / ``number`` -- a real number (lengths in metres, an optional
  trailing ``m`` is accepted);
* ``angle`` -- radians, or degrees with a trailing ``deg``;
* ``count`` -- a non-negative integer;
* ``flag`` -- ``true``/``false``/``yes``/``no``/``1``/``0``;
* ``choice`` -- one of a fixed set of words.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .grid import UpdateModel
from .lidar import LidarModel
from .matcher import MatchConfig, Solver
from .sim import ControllerConfig
from .slam import SlamConfig
from .vehicle import VehicleParams


class ConfigFileError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# key -> (kind, section, attribute[, choices])
KEYS: dict[str, tuple] = {
    # ground removal and projection
    "cell_size": ("length", "slam", "cell_size"),
    "h_thres": ("length", "slam", "h_thres"),
    "bin_width": ("angle", "slam", "bin_width"),
    "max_range": ("length", "slam", "max_range"),
    # map
    "finest_resolution": ("length", "slam", "finest_resolution"),
    "n_levels": ("count", "slam", "n_levels"),
    "map_size_x": ("length", "slam", "map_size_x"),
    "map_size_y": ("length", "slam", "map_size_y"),
    "l_hit": ("number", "update", "l_hit"),
    "l_miss": ("number", "update", "l_miss"),
    "l_min": ("number", "update", "l_min"),
    "l_max": ("number", "update", "l_max"),
    # matcher
    "solver": ("choice", "match", "solver", ("lm", "gn_fixed")),
    "max_iterations": ("count", "match", "max_iterations"),
    "epsilon": ("number", "match", "epsilon"),
    "lambda_init": ("number", "match", "lambda_init"),
    "lambda_up": ("number", "match", "lambda_up"),
    "lambda_down": ("number", "match", "lambda_down"),
    "lambda_min": ("number", "match", "lambda_min"),
    "occupied_threshold": ("number", "match", "threshold"),
    "gn_robust": ("flag", "match", "gn_robust"),
    "damping": ("choice", "match", "damping", ("marquardt", "identity")),
    # slam gating
    "max_translation": ("length", "slam", "max_translation"),
    "max_rotation": ("angle", "slam", "max_rotation"),
    # vehicle
    "mass": ("number", "vehicle", "m"),
    "yaw_inertia": ("number", "vehicle", "J"),
    "l_f": ("length", "vehicle", "l_f"),
    "l_r": ("length", "vehicle", "l_r"),
    "c_f": ("number", "vehicle", "C_f"),
    "c_r": ("number", "vehicle", "C_r"),
    "preview_distance": ("length", "vehicle", "l_s"),
    "speed": ("number", "vehicle", "V"),
    # controller
    "kp": ("number", "controller", "kp"),
    "ki": ("number", "controller", "ki"),
    "kd": ("number", "controller", "kd"),
    "delta_max": ("angle", "controller", "delta_max"),
    "i_clamp": ("angle", "controller", "i_clamp"),
    "command_blend": ("number", "controller", "command_blend"),
    "feedforward": ("flag", "controller", "feedforward"),
    # lidar
    "lidar_channels": ("count", "lidar", "channels"),
    "lidar_vertical_fov": ("angle", "lidar", "vertical_fov"),
    "lidar_max_range": ("length", "lidar", "max_range"),
    "lidar_noise": ("length", "lidar", "range_noise"),
    "lidar_mount_height": ("length", "lidar", "mount_height"),
    # simulation
    "dt": ("number", "sim", "dt"),
    "lidar_period": ("number", "sim", "lidar_period"),
    "speed_tau": ("number", "sim", "speed_tau"),
    "duration": ("number", "sim", "duration"),
    "seed": ("count", "sim", "seed"),
    "seg_len": ("count", "sim", "seg_len"),
    "max_path_distance": ("length", "sim", "max_path_distance"),
}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(kind: str, text: str, choices=()):
    t = text.strip()
    if kind in ("length", "number"):
        if kind == "length" and t.endswith("m"):
            t = t[:-1].strip()
        v = float(t)
        if not math.isfinite(v):
            raise ValueError("value must be finite")
        return v
    if kind == "angle":
        if t.endswith("deg"):
            return math.radians(float(t[:-3]))
        if t.endswith("rad"):
            t = t[:-3]
        v = float(t)
        if not math.isfinite(v):
            raise ValueError("value must be finite")
        return v
    if kind == "count":
        v = int(t)
        if v < 0:
            raise ValueError("count must be non-negative")
        return v
    if kind == "flag":
        low = t.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a flag, got {t!r}")
    if kind == "choice":
        if t not in choices:
            raise ValueError(f"expected one of {', '.join(choices)}, got {t!r}")
        return t
    raise AssertionError(kind)


@dataclass(frozen=True)
class Settings:
    """All tunables, grouped by the component that consumes them."""

    slam: SlamConfig = field(default_factory=SlamConfig)
    vehicle: VehicleParams = VehicleParams()
    controller: ControllerConfig = ControllerConfig()
    lidar: LidarModel = LidarModel()
    sim: dict = field(default_factory=dict)  # SimRun keyword overrides

    def with_solver(self, solver: str | None = None, iterations: int | None = None) -> "Settings":
        m = self.slam.match
        if solver is not None:
            m = replace(m, solver=Solver(solver))
        if iterations is not None:
            m = replace(m, max_iterations=iterations)
        return replace(self, slam=replace(self.slam, match=m))


def parse_config(text: str) -> Settings:
    groups: dict[str, dict] = {k: {} for k in
                               ("slam", "update", "match", "vehicle", "controller", "lidar", "sim")}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigFileError(f"unknown key {key!r}", lineno)
        if key in lines:
            raise ConfigFileError(f"duplicate key {key!r} (first on line {lines[key]})", lineno)
        kind, section, attr, *rest = KEYS[key]
        try:
            groups[section][attr] = _convert(kind, value, rest[0] if rest else ())
        except ValueError as exc:
            raise ConfigFileError(f"{key}: {exc}", lineno) from None
        lines[key] = lineno

    try:
        match = replace(MatchConfig(), **groups["match"])
        update = replace(UpdateModel(), **groups["update"])
        slam = replace(SlamConfig(), match=match, update=update, **groups["slam"])
        slam.validate()
        return Settings(slam, replace(VehicleParams(), **groups["vehicle"]),
                        replace(ControllerConfig(), **groups["controller"]),
                        replace(LidarModel(), **groups["lidar"]), groups["sim"])
    except ValueError as exc:
        raise ConfigFileError(str(exc), 0) from None


def load_config(path) -> Settings:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def default_config_text() -> str:
    """A commented config listing every key at its default value."""
    s = Settings()
    sources = {"slam": s.slam, "update": s.slam.update, "match": s.slam.match,
               "vehicle": s.vehicle, "controller": s.controller, "lidar": s.lidar}
    from .sim import SimRun
    sim_defaults = {f: getattr(SimRun, f) for f in
                    ("dt", "lidar_period", "speed_tau", "seed", "seg_len", "max_path_distance")}
    out = []
    for key, (kind, section, attr, *_) in KEYS.items():
        if section == "sim":
            if attr not in sim_defaults:
                out.append(f"# {key} =   ({kind}; default: run to path end)")
                continue
            v = sim_defaults[attr]
        else:
            v = getattr(sources[section], attr)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif hasattr(v, "value"):
            v = v.value
        out.append(f"# {key} = {v}   ({kind})")
    return "\n".join(out) + "\n"
