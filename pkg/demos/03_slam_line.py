"""Online SLAM over a short straight drive.

Generates the ``line`` scenario (0.05 m per frame), runs the SLAM session
frame by frame and writes the trajectory, per-frame report and map images.
"""

# %% Generate frames
import sys
import tempfile

from shuttle_slam.sim import generate_scenario
from shuttle_slam.slam import SlamConfig, SlamSession

frames, truth = generate_scenario("line", 21)

# %% Run the session
session = SlamSession(SlamConfig())
for frame, (tx, ty, tth) in zip(frames, truth):
    rep = session.process_frame(frame)
    p = rep.pose
    print(f"t={frame.timestamp:4.1f}  est=({p.x:6.3f}, {p.y:6.3f}, {p.theta:+.4f})  "
          f"truth=({tx:6.3f}, {ty:6.3f})  {rep.status}")

# %% Export
out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="slam_line_")
for name, path in session.export(out).items():
    print(f"{name}: {path}")
