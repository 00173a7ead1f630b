import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shuttle_slam import bench
from shuttle_slam.grid import OccupancyGrid, OccupancyPyramid
from shuttle_slam.matcher import (MatchConfig, Solver, alignment_error, match, match_pyramid,
                                  residual_and_jacobian, robust_weights, transform_endpoint,
                                  write_trace_csv)
from shuttle_slam.pose import PoseSE2


def smooth_grid(seed, n=24, res=0.1):
    """Random but smooth probability field, so finite differences behave."""
    rng = np.random.default_rng(seed)
    x, y = np.meshgrid(np.arange(n), np.arange(n))
    field = 0.5 + 0.0 * x
    for _ in range(4):
        kx, ky, ph = rng.uniform(0.1, 0.6), rng.uniform(0.1, 0.6), rng.uniform(0, 6.3)
        field = field + 0.12 * np.sin(kx * x + ky * y + ph)
    return OccupancyGrid.from_probabilities(np.clip(field, 0.01, 0.99), res, (0.0, 0.0))


def thick_wall_grid():
    """Cells of M = 1 three cells thick around a 4 m square, free elsewhere."""
    res = 0.1
    prob = np.full((80, 80), 0.0)
    prob[18:23, 18:62] = prob[57:62, 18:62] = 1.0
    prob[18:62, 18:23] = prob[18:62, 57:62] = 1.0
    return OccupancyGrid.from_probabilities(prob, res, (-4.0, -4.0))


def wall_centre_scan(pose=(0.0, 0.0, 0.0)):
    """Points on the centre line of the thick walls, in the frame of ``pose``."""
    t = np.linspace(-1.9, 1.9, 60)
    c = 2.0 - 0.3 + 0.05  # wall band [1.7, 2.2) m -> centre cell line at 1.95 m
    pts = np.vstack([np.column_stack((t, np.full_like(t, c))),
                     np.column_stack((t, np.full_like(t, -c))),
                     np.column_stack((np.full_like(t, c), t)),
                     np.column_stack((np.full_like(t, -c), t))])
    x, y, th = pose
    cs, sn = math.cos(th), math.sin(th)
    d = pts - [x, y]
    return np.column_stack((cs * d[:, 0] + sn * d[:, 1], -sn * d[:, 0] + cs * d[:, 1]))


# -- transform and residuals -----------------------------------------------

def test_transform_endpoint_examples():
    assert np.allclose(transform_endpoint(PoseSE2(0, 0, 0), (1, 2)), [1, 2])
    assert np.allclose(transform_endpoint(PoseSE2(0, 0, math.pi / 2), (1, 0)), [0, 1])


def test_residual_cases():
    g = thick_wall_grid()
    pts = np.array([[0.0, 1.95],   # inside the wall band: M = 1
                    [-3.99, -3.99],  # in the border half-cell: outside
                    ])
    r, jac, w, inside = residual_and_jacobian(g, PoseSE2(), pts)
    assert inside.tolist() == [True, False]
    assert r[0] == 0.0 and np.all(jac[1] == 0) and w[1] == 0


def test_unknown_space_sits_on_the_cap():
    g = OccupancyGrid.covering(0.1, (0, 0), 2, 2)
    r, _, w, _ = residual_and_jacobian(g, PoseSE2(), np.array([[1.0, 1.0]]))
    assert r[0] == 0.5 and w[0] == 1.0 and w[0] * r[0] ** 2 == 0.25


def test_large_residual_is_capped():
    w = robust_weights(np.array([0.8, 0.3, -0.9]), 0.5)
    assert np.isclose(w[0] * 0.8 ** 2, 0.25)
    assert w[1] == 1.0
    assert np.isclose(w[2] * 0.81, 0.25)


@given(st.integers(0, 2 ** 31), st.floats(-math.pi, math.pi))
def test_capped_loss_bound(seed, theta):
    g = smooth_grid(seed % 50)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, (40, 2))
    plain, capped, n = alignment_error(g, PoseSE2(1.2, 1.2, theta), pts)
    assert 0 <= capped <= n * 0.25 + 1e-12
    assert capped <= plain + 1e-12


@given(st.integers(0, 2 ** 31))
def test_jacobian_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    g = smooth_grid(seed % 20)
    pose = PoseSE2.make(rng.uniform(1.1, 1.3), rng.uniform(1.1, 1.3), rng.uniform(-math.pi, math.pi))
    pts = rng.uniform(-0.7, 0.7, (20, 2))
    r, jac, _, inside = residual_and_jacobian(g, pose, pts)
    assert inside.all()
    h = 1e-7
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        rp = residual_and_jacobian(g, pose.shifted(e), pts)[0]
        rm = residual_and_jacobian(g, pose.shifted(-e), pts)[0]
        fd = -(rp - rm) / (2 * h)  # r = 1 - M, J = dM/dxi
        # skip points whose stencil straddles a cell-centre line (kink of the interpolant)
        world = np.column_stack([transform_endpoint(pose.shifted(s * e), p) for s in (-1, 1)
                                 for p in pts]).T.reshape(2, len(pts), 2)
        cells = np.floor(world / g.resolution - 0.5)
        same = np.all(cells[0] == cells[1], axis=1)
        scale = np.maximum(np.abs(jac[:, k]), 1e-3)
        assert np.all(np.abs(fd - jac[:, k])[same] / scale[same] < 1e-4)


# -- LM --------------------------------------------------------------------

def test_zero_residual_fixed_point():
    g = thick_wall_grid()
    res = match(g, wall_centre_scan(), PoseSE2())
    assert res.converged and res.iterations == 1
    assert res.pose == PoseSE2()
    assert res.final_alignment_error == 0.0


def test_recovers_displacement_and_reports_trace(room_grid):
    trial = bench.displaced_trials(1, seed=11)[0]
    res = match(room_grid, trial.scan, trial.start)
    assert res.converged and res.iterations <= 10
    assert bench.within(trial.truth, res.pose)
    accepted = [row.error for row in res.trace if row.accepted]
    assert all(b <= a for a, b in zip(accepted, accepted[1:]))
    buf = io.StringIO()
    write_trace_csv(buf, res)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "iter,error,step_norm,lambda,accepted"
    assert len(lines) == res.iterations + 1


@pytest.mark.parametrize("seed", range(6))
def test_stop_criterion_soundness(room_grid, seed):
    trial = bench.displaced_trials(1, seed=100 + seed, dx=0.3, dy=0.3, dtheta=0.2)[0]
    for iters in (2, 10):
        cfg = MatchConfig(max_iterations=iters)
        res = match(room_grid, trial.scan, trial.start, cfg)
        assert res.iterations <= iters
        assert res.converged == (res.trace[-1].step_norm < cfg.epsilon)
        assert res.final_alignment_error >= 0


def test_identity_damping_option(room_grid):
    trial = bench.displaced_trials(1, seed=12)[0]
    res = match(room_grid, trial.scan, trial.start,
                MatchConfig(damping="identity", lambda_min=1e-12))
    assert res.iterations <= 10 and res.ok


def test_gauss_newton_runs_fixed_iterations(room_grid):
    trial = bench.displaced_trials(1, seed=13)[0]
    for n in (1, 3, 5):
        res = match(room_grid, trial.scan, trial.start, MatchConfig(solver=Solver.GN_FIXED,
                                                                    max_iterations=n))
        assert res.iterations == n and len(res.trace) == n


def test_no_overlap_keeps_pose():
    g = thick_wall_grid()
    start = PoseSE2(50.0, 50.0, 0.1)
    for solver in Solver:
        res = match(g, wall_centre_scan(), start, MatchConfig(solver=solver))
        assert res.failed == "no_overlap" and res.pose == start and not res.converged


def test_whole_cell_translation_invariance():
    res = 0.125
    base = bench.room_grid(res)
    k = np.array([8, -4])
    shifted = OccupancyGrid(res, (base.origin[0] + k[0] * res, base.origin[1] + k[1] * res),
                            base.width, base.height, base.model, base.logodds.copy())
    trial = bench.displaced_trials(1, seed=5)[0]
    off = k * res
    a = match(base, trial.scan, trial.start)
    b = match(shifted, trial.scan, PoseSE2.make(trial.start.x + off[0], trial.start.y + off[1],
                                                trial.start.theta))
    assert a.iterations == b.iterations
    assert np.allclose([b.pose.x - off[0], b.pose.y - off[1], b.pose.theta], a.pose, atol=1e-9)


def test_config_validation():
    with pytest.raises(ValueError):
        MatchConfig(max_iterations=0)
    with pytest.raises(ValueError):
        MatchConfig(threshold=1.0)
    with pytest.raises(ValueError):
        MatchConfig(epsilon=0)
    assert MatchConfig(solver="gn_fixed").solver is Solver.GN_FIXED


# -- pyramid ---------------------------------------------------------------

def test_pyramid_identity_start():
    # walls 4 m thick: every level sees M = 1 around the scan points
    levels = []
    for k in range(5):
        res = 0.05 * 2 ** k
        n = int(round(20.0 / res))
        c = -10.0 + (np.arange(n) + 0.5) * res
        cheb = np.maximum(np.abs(c)[None, :], np.abs(c)[:, None])
        levels.append(OccupancyGrid.from_probabilities(
            ((cheb > 4.0) & (cheb < 8.0)).astype(float), res, (-10.0, -10.0)))
    pyr = OccupancyPyramid(levels)
    t = np.linspace(-5.5, 5.5, 50)
    pts = np.vstack([np.column_stack((t, np.full_like(t, s * 6.0))) for s in (-1, 1)])
    pose = PoseSE2(0.3, -0.2, 0.1)
    scan_pts = np.column_stack((math.cos(-0.1) * (pts[:, 0] - 0.3) - math.sin(-0.1) * (pts[:, 1] + 0.2),
                                math.sin(-0.1) * (pts[:, 0] - 0.3) + math.cos(-0.1) * (pts[:, 1] + 0.2)))
    res = match_pyramid(pyr, scan_pts, pose)
    assert all(level.converged and level.iterations == 1 for level in res.levels)
    assert res.pose == pose
    assert res.total_iterations == 5 and len(res.levels) == 5


def test_pyramid_needs_fewer_finest_iterations(room_pyramid):
    trials = bench.displaced_trials(10, seed=21)
    with_pyr = [match_pyramid(room_pyramid, t.scan, t.start).iterations for t in trials]
    fine_only = [match(room_pyramid.levels[0], t.scan, t.start).iterations for t in trials]
    assert sum(with_pyr) <= sum(fine_only)
