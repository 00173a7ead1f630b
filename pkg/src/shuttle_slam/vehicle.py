"""Single-track lateral dynamics, segmented cubic paths and steering control."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .pose import wrap_angle

V_MIN = 0.1
COMMAND_BLEND = 0.25


class OffPath(RuntimeError):
    """Pose too far from the reference path for a meaningful error."""


@dataclass(frozen=True)
class VehicleParams:
    """Defaults: a small electric shuttle (``l_f``/``l_r`` are the CG-to-axle distances)."""

    m: float = 2000.0
    J: float = 3728.0
    l_f: float = 1.3008
    l_r: float = 1.54527
    C_f: float = 1.9e5
    C_r: float = 5e5
    l_s: float = 2.0
    V: float = 12.0 / 3.6

    def __post_init__(self):
        for name in ("m", "J", "l_f", "l_r", "C_f", "C_r", "l_s", "V"):
            if not getattr(self, name) > 0:
                raise ValueError(f"vehicle parameter {name} must be positive")

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r


def state_matrices(p: VehicleParams, V: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(A, B)`` for state ``(beta, r, dpsi, y)`` and input ``(delta_f, rho_ref)``."""
    V = p.V if V is None else V
    if V <= 0:
        raise ValueError("speed must be positive")
    m, J, lf, lr, Cf, Cr, ls = p.m, p.J, p.l_f, p.l_r, p.C_f, p.C_r, p.l_s
    a11 = -(Cr + Cf) / (m * V)
    a12 = -1.0 + (Cr * lr - Cf * lf) / (m * V * V)
    a21 = (Cr * lr - Cf * lf) / J
    a22 = -(Cr * lr * lr + Cf * lf * lf) / (J * V)
    A = np.array([[a11, a12, 0.0, 0.0],
                  [a21, a22, 0.0, 0.0],
                  [0.0, 1.0, 0.0, 0.0],
                  [V, ls, V, 0.0]])
    B = np.array([[Cf / (m * V), 0.0],
                  [Cf * lf / J, 0.0],
                  [0.0, -V],
                  [0.0, ls * V]])
    return A, B


def lateral_dynamics(x: np.ndarray, delta_f: float, rho_ref: float, p: VehicleParams,
                     V: float | None = None) -> np.ndarray:
    A, B = state_matrices(p, V)
    return A @ np.asarray(x, float) + B @ np.array([delta_f, rho_ref])


def steady_state(delta_f: float, p: VehicleParams, V: float | None = None) -> tuple[float, float]:
    """Constant-steer equilibrium ``(beta, r)`` of the side-slip/yaw subsystem."""
    A, B = state_matrices(p, V)
    beta, r = np.linalg.solve(A[:2, :2], -B[:2, 0] * delta_f)
    return float(beta), float(r)


def curvature_gain(p: VehicleParams, V: float | None = None) -> float:
    """Steady-state path curvature per radian of steer, ``r_ss / (V delta)``."""
    V = p.V if V is None else V
    return steady_state(1.0, p, V)[1] / V


def min_turn_radius(p: VehicleParams, delta_max: float, V: float | None = None) -> float:
    return 1.0 / (curvature_gain(p, V) * delta_max)


@dataclass
class LateralState:
    beta: float = 0.0
    r: float = 0.0
    dpsi: float = 0.0
    y: float = 0.0
    X: float = 0.0
    Y: float = 0.0
    psi: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.beta, self.r, self.dpsi, self.y, self.X, self.Y, self.psi])

    @classmethod
    def from_array(cls, a) -> "LateralState":
        s = cls(*map(float, a))
        s.dpsi = wrap_angle(s.dpsi)
        s.psi = wrap_angle(s.psi)
        return s


def _full_rhs(z: np.ndarray, u: np.ndarray, A: np.ndarray, B: np.ndarray, V: float) -> np.ndarray:
    out = np.empty(7)
    out[:4] = A @ z[:4] + B @ u
    psi = z[6]
    out[4] = V * math.cos(psi)
    out[5] = V * math.sin(psi)
    out[6] = z[1]
    return out


def integrate(state: LateralState, delta_f: float, rho_ref: float, p: VehicleParams,
              V: float, dt: float) -> LateralState:
    """Advance ``dt`` with RK4, sub-stepping to stay inside RK4's stability region.

    Below ``V_MIN`` the lateral states are frozen and only the pose moves.
    """
    z = state.as_array()
    if V < V_MIN:
        z[4] += V * math.cos(z[6]) * dt
        z[5] += V * math.sin(z[6]) * dt
        return LateralState.from_array(z)
    A, B = state_matrices(p, V)
    u = np.array([delta_f, rho_ref])
    rho = float(np.max(np.abs(np.linalg.eigvals(A[:2, :2]))))
    n = max(1, int(math.ceil(dt * rho / 2.0)))
    h = dt / n
    for _ in range(n):
        k1 = _full_rhs(z, u, A, B, V)
        k2 = _full_rhs(z + 0.5 * h * k1, u, A, B, V)
        k3 = _full_rhs(z + 0.5 * h * k2, u, A, B, V)
        k4 = _full_rhs(z + h * k3, u, A, B, V)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return LateralState.from_array(z)


# -- paths -----------------------------------------------------------------

@dataclass(frozen=True)
class PathSpline:
    """Cubic segments ``X_i(lam) = a lam^3 + b lam^2 + c lam + d``, ``lam`` in [0, 1].

    ``cx`` / ``cy`` hold one ``(a, b, c, d)`` row per segment.
    """

    cx: np.ndarray
    cy: np.ndarray
    rms: float = 0.0
    _samples: np.ndarray = field(default=None, repr=False, compare=False)

    SAMPLES_PER_SEGMENT = 20

    def __post_init__(self):
        lam = np.linspace(0.0, 1.0, self.SAMPLES_PER_SEGMENT + 1)
        pts = np.stack([self.evaluate(np.full(len(lam), i), lam) for i in range(self.n_segments)])
        object.__setattr__(self, "_samples", pts)  # (S, K, 2)

    @property
    def n_segments(self) -> int:
        return len(self.cx)

    def evaluate(self, seg, lam, order: int = 0) -> np.ndarray:
        seg = np.asarray(seg, dtype=int)
        lam = np.asarray(lam, dtype=float)
        if order == 0:
            basis = np.stack([lam ** 3, lam ** 2, lam, np.ones_like(lam)], axis=-1)
        elif order == 1:
            basis = np.stack([3 * lam ** 2, 2 * lam, np.ones_like(lam), np.zeros_like(lam)], axis=-1)
        elif order == 2:
            basis = np.stack([6 * lam, 2 * np.ones_like(lam), np.zeros_like(lam), np.zeros_like(lam)], axis=-1)
        else:
            raise ValueError("order must be 0, 1 or 2")
        return np.stack([np.sum(basis * self.cx[seg], axis=-1),
                         np.sum(basis * self.cy[seg], axis=-1)], axis=-1)

    def point(self, seg: int, lam: float) -> np.ndarray:
        return self.evaluate(seg, lam)

    def tangent(self, seg: int, lam: float) -> np.ndarray:
        return self.evaluate(seg, lam, 1)

    def curvature(self, seg, lam) -> np.ndarray:
        d1 = self.evaluate(seg, lam, 1)
        d2 = self.evaluate(seg, lam, 2)
        cross = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
        return cross / np.hypot(d1[..., 0], d1[..., 1]) ** 3

    def sample(self, per_segment: int = 50) -> np.ndarray:
        lam = np.linspace(0.0, 1.0, per_segment, endpoint=False)
        pts = [self.evaluate(np.full(per_segment, i), lam) for i in range(self.n_segments)]
        pts.append(self.evaluate(np.array([self.n_segments - 1]), np.array([1.0])))
        return np.vstack(pts)

    def joint_gaps(self) -> tuple[np.ndarray, np.ndarray]:
        """Max-abs C0 and C1 mismatch at each internal joint."""
        i = np.arange(self.n_segments - 1)
        c0 = np.abs(self.evaluate(i, np.ones(len(i))) - self.evaluate(i + 1, np.zeros(len(i))))
        c1 = np.abs(self.evaluate(i, np.ones(len(i)), 1) - self.evaluate(i + 1, np.zeros(len(i)), 1))
        return c0.max(axis=1) if len(i) else np.zeros(0), c1.max(axis=1) if len(i) else np.zeros(0)

    def progress(self, seg: int, lam: float) -> float:
        return seg + lam

    def nearest(self, p, window: tuple[int, int] | None = None) -> tuple[int, float, float]:
        """``(segment, lam, distance)`` of the closest path point to ``p``.

        Coarse search over per-segment samples (optionally restricted to the
        segment range ``window``), then Newton refinement over ``lam``, hopping
        to a neighbour segment when the minimum lies past a segment end.
        """
        p = np.asarray(p, dtype=float)
        lo, hi = (0, self.n_segments) if window is None else (
            max(0, window[0]), min(self.n_segments, window[1]))
        d2 = np.sum((self._samples[lo:hi] - p) ** 2, axis=-1)
        k = int(np.argmin(d2))
        seg, idx = divmod(k, d2.shape[1])
        seg += lo
        lam = idx / self.SAMPLES_PER_SEGMENT
        for _ in range(3):
            lam = self._newton(seg, lam, p)
            if lam <= 0.0 and seg > lo:
                seg, lam = seg - 1, 1.0
            elif lam >= 1.0 and seg < hi - 1:
                seg, lam = seg + 1, 0.0
            else:
                break
        dist = float(np.hypot(*(self.point(seg, lam) - p)))
        return seg, lam, dist

    def _newton(self, seg: int, lam: float, p: np.ndarray) -> float:
        for _ in range(8):
            q = self.point(seg, lam) - p
            d1 = self.tangent(seg, lam)
            d2 = self.evaluate(seg, lam, 2)
            f = q @ d1
            fp = d1 @ d1 + q @ d2
            if fp <= 0:
                break
            new = min(1.0, max(0.0, lam - f / fp))
            if abs(new - lam) < 1e-12:
                lam = new
                break
            lam = new
        return lam


def fit_path(waypoints, seg_len: int = 10) -> PathSpline:
    """Least-squares cubic segments with C0/C1 joint constraints.

    Consecutive segments share their boundary waypoint; ``lam`` runs over each
    segment by normalized chord length.
    """
    pts = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise ValueError("waypoints must be finite")
    if seg_len < 4:
        raise ValueError("segments need at least 4 points for a cubic fit")
    n = len(pts)
    n_seg = int(round((n - 1) / (seg_len - 1)))
    if n_seg < 2:
        raise ValueError(f"need at least two segments' worth of points, got {n}")
    bounds = np.rint(np.linspace(0, n - 1, n_seg + 1)).astype(int)

    rows, targets = [], []
    for i in range(n_seg):
        seg_pts = pts[bounds[i]:bounds[i + 1] + 1]
        chord = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(seg_pts, axis=0).T))])
        if chord[-1] <= 0:
            raise ValueError(f"segment {i} is degenerate (all points identical)")
        lam = chord / chord[-1]
        block = np.zeros((len(lam), 4 * n_seg))
        block[:, 4 * i:4 * i + 4] = np.column_stack([lam ** 3, lam ** 2, lam, np.ones_like(lam)])
        rows.append(block)
        targets.append(seg_pts)
    design = np.vstack(rows)
    target = np.vstack(targets)

    cons = np.zeros((2 * (n_seg - 1), 4 * n_seg))
    for i in range(n_seg - 1):
        cons[2 * i, 4 * i:4 * i + 4] = [1, 1, 1, 1]       # X_i(1)
        cons[2 * i, 4 * i + 7] = -1                       # - X_{i+1}(0)
        cons[2 * i + 1, 4 * i:4 * i + 4] = [3, 2, 1, 0]   # X_i'(1)
        cons[2 * i + 1, 4 * i + 6] = -1                   # - X_{i+1}'(0)
    nc = len(cons)
    kkt = np.block([[2 * design.T @ design, cons.T], [cons, np.zeros((nc, nc))]])
    rhs = np.vstack([2 * design.T @ target, np.zeros((nc, 2))])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:4 * n_seg]
    coef = sol.reshape(n_seg, 4, 2)
    resid = design @ sol - target
    rms = float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1))))
    return PathSpline(coef[:, :, 0].copy(), coef[:, :, 1].copy(), rms)


@dataclass(frozen=True)
class PathError:
    h: float
    dpsi: float
    y: float
    segment: int
    lam: float
    curvature: float


def path_error(spline: PathSpline, pose, l_s: float, window: tuple[int, int] | None = None,
               max_distance: float = 10.0) -> PathError:
    """Signed offset ``h`` (positive left), heading error and ``y = h + l_s sin(dpsi)``."""
    X, Y, psi = pose
    seg, lam, dist = spline.nearest((X, Y), window)
    if dist > max_distance:
        raise OffPath(f"pose ({X:.2f}, {Y:.2f}) is {dist:.2f} m from the path")
    q = spline.point(seg, lam)
    t = spline.tangent(seg, lam)
    t = t / np.hypot(*t)
    h = float(t[0] * (Y - q[1]) - t[1] * (X - q[0]))
    dpsi = wrap_angle(psi - math.atan2(t[1], t[0]))
    y = h + l_s * math.sin(dpsi)
    return PathError(h, dpsi, y, seg, lam, float(spline.curvature(seg, lam)))


# -- control ---------------------------------------------------------------

@dataclass
class PIDController:
    """PID on ``-y`` with a clamped integral contribution and saturated output."""

    kp: float = 0.25
    ki: float = 0.02
    kd: float = 0.05
    delta_max: float = 0.5
    i_clamp: float = 0.2
    integral: float = 0.0
    prev_error: float | None = None

    def reset(self) -> None:
        self.integral = 0.0
        self.prev_error = None

    def step(self, y: float, dt: float) -> float:
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.integral += y * dt
        if self.ki > 0:
            lim = self.i_clamp / self.ki
            self.integral = min(lim, max(-lim, self.integral))
        deriv = 0.0 if self.prev_error is None else (y - self.prev_error) / dt
        self.prev_error = y
        u = -(self.kp * y + self.ki * self.integral + self.kd * deriv)
        return min(self.delta_max, max(-self.delta_max, u))


def pid_step(ctrl: PIDController, y: float, dt: float) -> float:
    return ctrl.step(y, dt)


def command_filter(prev_cmd: float, new_cmd: float, blend: float = COMMAND_BLEND) -> float:
    """Pass only a quarter of the change toward the new command per step."""
    return prev_cmd + blend * (new_cmd - prev_cmd)


# -- waypoint files ----------------------------------------------------------

def read_waypoints(path) -> np.ndarray:
    """``x_m, y_m`` rows; a non-numeric first line is taken as a header."""
    import csv

    pts = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            try:
                x, y = (float(v) for v in row[:2])
            except ValueError:
                if lineno == 1:
                    continue
                raise ValueError(f"{path}: line {lineno}: expected 'x_m, y_m'") from None
            if len(row) != 2:
                raise ValueError(f"{path}: line {lineno}: expected 2 fields")
            pts.append((x, y))
    return np.array(pts, dtype=float).reshape(-1, 2)


def write_waypoints(path, pts) -> None:
    with open(path, "w") as fh:
        fh.write("x_m,y_m\n")
        for x, y in np.asarray(pts, dtype=float):
            fh.write(f"{x:.9g},{y:.9g}\n")
