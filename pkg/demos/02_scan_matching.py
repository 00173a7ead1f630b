"""Scan matching against an occupancy map.

Builds the room map, perturbs a scan by (0.2 m, 0.1 m, 5 deg) and recovers
the pose with the damped solver, then compares against three fixed
Gauss-Newton steps.  A 0.5 m / 10 deg offset shows why the coarse-to-fine
pyramid is needed.
"""

# %% Map and one displaced scan
import math

from shuttle_slam import bench
from shuttle_slam.matcher import MatchConfig, Solver, match, match_pyramid

grid = bench.room_grid(0.1)
trial = bench.displaced_trials(1, seed=11)[0]
print("truth:", trial.truth)
print("start:", trial.start)

# %% Levenberg-Marquardt with the stop criterion
lm = match(grid, trial.scan, trial.start)
print(f"LM    -> {lm.pose}  iterations={lm.iterations} converged={lm.converged} "
      f"error={lm.final_alignment_error:.2f}")
for row in lm.trace:
    print(f"   iter {row.iteration}: error {row.error:8.3f} step {row.step_norm:.2e} "
          f"lambda {row.lam:.3g} {'accepted' if row.accepted else 'rejected'}")

# %% Fixed three Gauss-Newton steps
gn = match(grid, trial.scan, trial.start, MatchConfig(solver=Solver.GN_FIXED, max_iterations=3))
print(f"GN-3  -> {gn.pose}  error={gn.final_alignment_error:.2f}")

# %% Large displacement: finest level only vs the pyramid
pyr = bench.room_pyramid()
far = bench.large_displacement_trials(1)[0]
fine = match(pyr.levels[0], far.scan, far.start)
coarse_to_fine = match_pyramid(pyr, far.scan, far.start)
for name, res in (("finest only", fine), ("pyramid", coarse_to_fine)):
    d = far.truth.delta(res.pose)
    print(f"{name:12s} error to truth: {math.hypot(d[0], d[1]) * 100:.1f} cm, "
          f"{math.degrees(abs(d[2])):.2f} deg")
