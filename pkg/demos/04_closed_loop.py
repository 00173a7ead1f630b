"""Closed-loop path following with ground truth and with SLAM.

Runs the bundled loop course at 12 km/h twice, once steering from the true
pose and once from the SLAM estimate, and compares lateral errors.  The SLAM
run takes about a minute.
"""

# %% Ground-truth localization
from shuttle_slam.sim import Mode, default_run, run_closed_loop

truth = run_closed_loop(default_run(Mode.TRUTH))
print("TRUTH:", truth.summary().replace("\n", "  "))

# %% SLAM localization (LIDAR at 10 Hz, estimate held between frames)
slam = run_closed_loop(default_run(Mode.SLAM))
print("SLAM: ", slam.summary().replace("\n", "  "))

# %% Comparison
print(f"lateral RMSE: truth {truth.rmse:.3f} m, slam {slam.rmse:.3f} m, "
      f"difference {slam.rmse - truth.rmse:+.3f} m")
