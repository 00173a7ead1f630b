import io
import math

import numpy as np
import pytest

from shuttle_slam.grid import read_pgm
from shuttle_slam.lidar import LidarModel, raycast_frame
from shuttle_slam.matcher import Solver
from shuttle_slam.pose import PoseSE2
from shuttle_slam.scan import PointCloud3D
from shuttle_slam.sim import generate_scenario
from shuttle_slam.slam import (ConfigError, FrameOrderError, SlamConfig, SlamSession,
                               read_trajectory_csv, with_solver, write_trajectory_csv)
from shuttle_slam.world import square_room

SMALL = SlamConfig(max_range=20.0, map_size_x=40.0, map_size_y=40.0)


def room_frames(n, half=4.987):
    room = square_room(half, half)
    lidar = LidarModel(max_range=20.0)
    frame = raycast_frame(room, 0.0, 0.0, 0.0, lidar)
    return [PointCloud3D(0.1 * k, frame.points) for k in range(n)]


def test_default_session():
    s = SlamSession()
    assert len(s.pyramid.levels) == 5
    assert s.pyramid.resolutions[0] == 0.05
    assert s.pose == PoseSE2()


def test_extent_smaller_than_range_rejected():
    with pytest.raises(ConfigError):
        SlamSession(SlamConfig(map_size_x=10.0, map_size_y=10.0))


def test_configured_origin():
    origin = PoseSE2.make(3.0, -2.0, math.pi / 4)
    s = SlamSession(SlamConfig(max_range=20.0, map_size_x=40.0, map_size_y=40.0, origin=origin))
    rep = s.process_frame(room_frames(1)[0])
    assert rep.pose == origin and rep.status == "bootstrap"


def test_static_sensor_does_not_drift():
    s = SlamSession(SMALL)
    reports = s.run(room_frames(100))
    for r in reports:
        assert math.hypot(r.pose.x, r.pose.y) <= 0.05
        assert abs(r.pose.theta) <= math.radians(0.5)
        assert r.n_projected <= r.n_kept <= r.n_raw
    assert all(r.status == "ok" for r in reports[1:])


def test_line_increments():
    frames, truth = generate_scenario("line", 6)
    s = SlamSession()
    poses = np.array([s.process_frame(f).pose for f in frames])
    steps = np.diff(poses, axis=0)
    assert np.allclose(steps[:, 0], 0.05, atol=0.01)
    assert np.allclose(steps[:, 1:], 0.0, atol=0.01)


def test_out_of_order_frame_rejected():
    s = SlamSession(SMALL)
    f = room_frames(2)
    s.process_frame(f[1])
    with pytest.raises(FrameOrderError):
        s.process_frame(f[0])
    with pytest.raises(FrameOrderError):
        s.process_frame(f[1])


def test_empty_frame_holds_pose_and_map():
    s = SlamSession(SMALL)
    s.process_frame(room_frames(1)[0])
    before = [g.logodds.copy() for g in s.pyramid.levels]
    rep = s.process_frame(PointCloud3D(0.5, np.zeros((0, 3))))
    assert rep.status == "no_overlap" and not rep.converged
    assert rep.pose == PoseSE2()
    assert all(np.array_equal(a, g.logodds) for a, g in zip(before, s.pyramid.levels))


def test_non_converged_frame_skips_map_update():
    s = SlamSession(with_solver(SMALL, "lm", 1))
    frames = room_frames(1)
    s.process_frame(frames[0])
    # a large jump that one LM iteration cannot settle
    room = square_room(4.987, 4.987)
    moved = raycast_frame(room, 0.4, 0.3, 0.15, LidarModel(max_range=20.0), 0.1)
    before = [g.logodds.copy() for g in s.pyramid.levels]
    rep = s.process_frame(moved)
    assert rep.status == "not_converged"
    assert all(np.array_equal(a, g.logodds) for a, g in zip(before, s.pyramid.levels))


def test_motion_bound_gate():
    s = SlamSession(SlamConfig(max_range=20.0, map_size_x=40.0, map_size_y=40.0,
                               max_translation=0.01))
    frames, _ = generate_scenario("line", 3)
    s.run(frames)
    assert [r.status for r in s.trajectory] == ["bootstrap", "motion_bound", "motion_bound"]
    assert s.pose == PoseSE2()


def test_with_solver():
    cfg = with_solver(SlamConfig(), "gn_fixed", 3)
    assert cfg.match.solver is Solver.GN_FIXED and cfg.match.max_iterations == 3


def test_export_round_trip(tmp_path):
    s = SlamSession(SMALL)
    s.run(room_frames(3))
    paths = s.export(tmp_path)
    rows = read_trajectory_csv(paths["trajectory"])
    assert len(rows) == 3
    assert all(abs(r.x) < 0.05 and abs(r.y) < 0.05 for r in rows)
    buf = io.StringIO()
    write_trajectory_csv(buf, s.trajectory)
    assert buf.getvalue() == paths["trajectory"].read_text()
    gray = read_pgm(paths["map_level0"])
    assert gray.shape == (s.pyramid.levels[0].height, s.pyramid.levels[0].width)
    assert (tmp_path / "map_level4.meta").exists()
    assert paths["frames"].read_text().splitlines()[0].endswith("n_projected,status")


def test_one_frame_export(tmp_path):
    s = SlamSession(SMALL)
    s.run(room_frames(1))
    rows = read_trajectory_csv(s.export(tmp_path)["trajectory"])
    assert len(rows) == 1 and (rows[0].x, rows[0].y, rows[0].theta) == (0.0, 0.0, 0.0)


def test_map_matches_room_geometry():
    s = SlamSession(SMALL)
    s.run(room_frames(2))
    g = s.pyramid.levels[1]
    jj, ii = np.nonzero(g.occupied())
    c = g.cell_center(ii, jj)
    # occupied cells hug the inner wall faces (scan cells are 0.2 m wide)
    d = np.abs(4.987 - np.max(np.abs(c), axis=1))
    assert len(d) > 300 and np.all(d <= 0.2 + g.resolution)


def test_export_error_has_path(tmp_path):
    s = SlamSession(SMALL)
    s.run(room_frames(1))
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        s.export(blocker / "sub")


def test_deterministic():
    frames, _ = generate_scenario("line", 4)
    a, b = SlamSession(), SlamSession()
    a.run(frames)
    b.run(frames)
    assert [r.pose for r in a.trajectory] == [r.pose for r in b.trajectory]
    assert all(np.array_equal(x.logodds, y.logodds) for x, y in zip(a.pyramid.levels, b.pyramid.levels))
