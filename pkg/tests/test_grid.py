import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shuttle_slam.grid import (OccupancyGrid, OccupancyPyramid, OutOfBounds, UpdateModel,
                               interpolate, read_pgm, update_pyramid, write_pgm)
from shuttle_slam.pose import PoseSE2
from shuttle_slam.scan import PlanarScan

W = math.radians(1.0)


def beam_scan(bearing_ranges, w=W):
    scan = PlanarScan.empty(bin_width=w)
    ranges = scan.ranges.copy()
    for bearing, r in bearing_ranges:
        ranges[int(round((bearing + math.pi) / w)) % len(ranges)] = r
    return PlanarScan(0.0, w, ranges)


def affine_grid(a, b, c, res=0.1, n=12, origin=(-0.3, 0.2)):
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    x = origin[0] + (i + 0.5) * res
    y = origin[1] + (j + 0.5) * res
    return OccupancyGrid.from_probabilities(a + b * x + c * y, res, origin)


# -- interpolation ---------------------------------------------------------

def test_value_at_node_is_node_value():
    rng = np.random.default_rng(0)
    g = OccupancyGrid.from_probabilities(rng.uniform(0, 1, (6, 7)), 0.2, (1.0, -2.0))
    for i, j in [(0, 0), (3, 2), (5, 4)]:
        p = g.cell_center(i, j)[0]
        assert math.isclose(interpolate(g, p).value, g.probabilities[j, i], abs_tol=1e-12)


def test_cell_centre_of_half_occupied_square():
    g = OccupancyGrid.from_probabilities(np.array([[0.0, 0.0], [1.0, 1.0]]), 1.0, (0.0, 0.0))
    res = g.interpolate((1.0, 1.0))
    assert res.value == 0.5
    assert np.allclose(res.gradient, [0.0, 1.0])


@given(st.floats(0.1, 0.9), st.floats(-0.03, 0.03), st.floats(-0.03, 0.03),
       st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_affine_field_reproduced_exactly(a, b, c, fx, fy):
    res = 0.1
    g = affine_grid(a, b, c, res)
    lo_x = g.origin[0] + 0.5 * res
    lo_y = g.origin[1] + 0.5 * res
    span = (g.width - 1) * res - 2e-9
    p = (lo_x + 1e-9 + fx * span, lo_y + 1e-9 + fy * span)
    out = g.interpolate(p)
    assert abs(out.value - (a + b * p[0] + c * p[1])) < 1e-9
    assert np.allclose(out.gradient, [b, c], atol=1e-9)


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.02, 1.0))
def test_gradient_matches_central_differences(seed, res):
    rng = np.random.default_rng(seed)
    g = OccupancyGrid.from_probabilities(rng.uniform(0, 1, (5, 5)), res, (0.0, 0.0))
    # stay away from cell-centre lines where the interpolant has kinks
    cell = rng.integers(0, 4, 2)
    frac = rng.uniform(0.1, 0.9, 2)
    p = (np.array([0.5, 0.5]) + cell + frac) * res
    h = 1e-6 * res
    fd = np.array([(g.interpolate(p + e).value - g.interpolate(p - e).value) / (2 * h)
                   for e in (np.array([h, 0]), np.array([0, h]))])
    an = g.interpolate(p).gradient
    assert np.allclose(an, fd, rtol=1e-6, atol=1e-6 * max(1.0, np.abs(fd).max()))


@given(st.integers(0, 2 ** 32 - 1))
def test_value_inside_corner_envelope(seed):
    rng = np.random.default_rng(seed)
    prob = rng.uniform(0, 1, (4, 4))
    g = OccupancyGrid.from_probabilities(prob, 0.5, (0.0, 0.0))
    pts = rng.uniform(0.25, 1.75 - 1e-9, (50, 2))
    vals, _, inside = g.interpolate_many(pts)
    assert inside.all()
    u = np.floor(pts / 0.5 - 0.5).astype(int)
    for (i, j), v in zip(u, vals):
        corners = prob[j:j + 2, i:i + 2]
        assert corners.min() - 1e-12 <= v <= corners.max() + 1e-12
        assert 0.0 <= v <= 1.0


def test_out_of_bounds_signal():
    g = OccupancyGrid.covering(0.1, (0, 0), 1, 1)
    with pytest.raises(OutOfBounds):
        g.interpolate((0.01, 0.5))
    _, _, inside = g.interpolate_many(np.array([[0.5, 0.5], [5.0, 5.0], [np.nan, 0.0]]))
    assert inside.tolist() == [True, False, False]


def test_unknown_cells_are_one_half():
    g = OccupancyGrid.covering(0.1, (0, 0), 1, 1)
    assert np.all(g.probabilities == 0.5)
    assert g.interpolate((0.5, 0.5)).value == 0.5


# -- updates ---------------------------------------------------------------

def test_single_beam_hit_and_miss():
    g = OccupancyGrid.covering(0.1, (-1.0, -1.0), 4, 2)
    for _ in range(2):
        g.update_with_scan(PoseSE2(0.05, 0.05, 0.0), beam_scan([(0.0, 2.0)]))
    end = g.cell_of(np.array([2.05, 0.05]))[0]
    assert g.probabilities[end[1], end[0]] > 0.5
    row = g.probabilities[end[1], 10:end[0]]
    assert np.all(row < 0.5)
    assert np.count_nonzero(g.logodds) == len(row) + 1


def test_contradictory_observations_cancel():
    model = UpdateModel(l_hit=0.4, l_miss=-0.4)
    g = OccupancyGrid.covering(0.1, (-1.0, -1.0), 4, 2, model)
    g.update_with_scan(PoseSE2(0.05, 0.05, 0.0), beam_scan([(0.0, 1.0)]))
    g.update_with_scan(PoseSE2(0.05, 0.05, 0.0), beam_scan([(0.0, 2.0)]))
    cell = g.cell_of(np.array([1.05, 0.05]))[0]
    assert g.logodds[cell[1], cell[0]] == 0.0


def test_each_cell_updated_once_per_scan():
    g = OccupancyGrid.covering(0.1, (-2.0, -2.0), 4, 4)
    # many beams converging on the same end cell through shared cells
    bearings = np.radians(np.arange(-3, 4))
    g.update_with_scan(PoseSE2(0.0, 0.0, 0.0), beam_scan([(b, 1.5) for b in bearings]))
    assert g.logodds.max() <= 0.9 and g.logodds.min() >= -0.4


@given(st.lists(st.tuples(st.floats(-math.pi, math.pi), st.floats(0.1, 3.0)), min_size=1,
                max_size=20), st.integers(1, 30))
def test_log_odds_stay_clamped(beams, repeats):
    model = UpdateModel(l_hit=1.7, l_miss=-1.1, l_min=-3.0, l_max=3.0)
    g = OccupancyGrid.covering(0.2, (-2.0, -2.0), 4, 4, model)
    scan = beam_scan(beams)
    for k in range(repeats):
        g.update_with_scan(PoseSE2(0.1 * (k % 3), 0.0, 0.1 * k), scan)
        assert g.logodds.min() >= -3.0 and g.logodds.max() <= 3.0


def test_updates_commute_and_are_deterministic():
    s1 = beam_scan([(0.0, 1.5), (1.0, 0.7)])
    s2 = beam_scan([(-2.0, 1.2), (2.5, 0.9)])
    a = OccupancyGrid.covering(0.1, (-2.0, -2.0), 4, 4)
    b = OccupancyGrid.covering(0.1, (-2.0, -2.0), 4, 4)
    a.update_with_scan(PoseSE2(), s1)
    a.update_with_scan(PoseSE2(), s2)
    b.update_with_scan(PoseSE2(), s2)
    b.update_with_scan(PoseSE2(), s1)
    assert np.array_equal(a.logodds, b.logodds)


def test_beam_leaving_grid_is_truncated():
    g = OccupancyGrid.covering(0.1, (-1.0, -1.0), 2, 2)
    g.update_with_scan(PoseSE2(), beam_scan([(0.0, 5.0)]))
    assert g.logodds.max() == 0.0
    assert np.count_nonzero(g.logodds[10, 10:] < 0) == 10


def _room_sweep(half=4.987):
    """Exact ranges from the centre of a square room to its inner faces."""
    scan = PlanarScan.empty(bin_width=math.radians(0.25))
    b = scan.bearings
    return PlanarScan(0.0, scan.bin_width, half / np.maximum(np.abs(np.cos(b)), np.abs(np.sin(b))))


def test_room_sweep_matches_rasterized_walls():
    g = OccupancyGrid.covering(0.1, (-6.0, -6.0), 12, 12)
    g.update_with_scan(PoseSE2(), _room_sweep())
    jj, ii = np.nonzero(g.occupied())
    centres = g.cell_center(ii, jj)
    # distance from each occupied cell centre to the inner wall boundary
    d = np.abs(4.987 - np.max(np.abs(centres), axis=1))
    assert np.all(d <= g.resolution)
    # brute-force rasterization of the inner boundary: every boundary cell is covered
    t = np.linspace(-4.98, 4.98, 400)
    ring = np.vstack([np.column_stack((t, np.full_like(t, s * 4.987))) for s in (-1, 1)]
                     + [np.column_stack((np.full_like(t, s * 4.987), t)) for s in (-1, 1)])
    ring_cells = g.cell_of(ring)
    occ = g.occupied()
    for i, j in ring_cells:
        assert occ[j - 1:j + 2, i - 1:i + 2].any()


# -- pyramid ---------------------------------------------------------------

def test_pyramid_resolutions_halve():
    pyr = OccupancyPyramid.make(0.05, 5, size_x=20, size_y=20)
    assert np.allclose(pyr.resolutions, [0.05, 0.1, 0.2, 0.4, 0.8])
    extents = [(g.width * g.resolution, g.height * g.resolution) for g in pyr.levels]
    for ex, ey in extents:
        assert 20 <= ex < 20 + 0.8 and 20 <= ey < 20 + 0.8


def test_pyramid_levels_nest():
    pyr = OccupancyPyramid.make(0.05, 3, origin=(-6, -6), size_x=12, size_y=12)
    update_pyramid(pyr, PoseSE2(), _room_sweep())
    for fine, coarse in zip(pyr.levels, pyr.levels[1:]):
        jj, ii = np.nonzero(fine.occupied())
        ij = coarse.cell_of(fine.cell_center(ii, jj))
        occ = np.pad(coarse.occupied(), 1)
        for i, j in ij:
            assert occ[j:j + 3, i:i + 3].any()


def test_empty_scan_changes_nothing():
    pyr = OccupancyPyramid.make(0.1, 3, size_x=10, size_y=10)
    update_pyramid(pyr, PoseSE2(), PlanarScan.empty(bin_width=W))
    assert all(np.all(g.logodds == 0) for g in pyr.levels)


# -- export ----------------------------------------------------------------

def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    g = OccupancyGrid.from_probabilities(rng.uniform(0, 1, (7, 9)), 0.25, (1.5, -2.0))
    path = write_pgm(g, tmp_path / "m.pgm")
    gray = read_pgm(path)
    assert np.array_equal(gray, np.rint(255 * (1 - g.probabilities)).astype(int))
    meta = dict(line.split(" = ") for line in path.with_suffix(".meta").read_text().splitlines())
    assert meta["width"] == "9" and meta["height"] == "7"
    assert float(meta["resolution"]) == 0.25 and float(meta["occupied_threshold"]) == 0.5
    assert path.read_text().splitlines()[0] == "P2"
