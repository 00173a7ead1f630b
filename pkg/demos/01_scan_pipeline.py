"""From a 3D sweep to a planar scan.

Renders one 16-channel sweep in the furnished room, removes the ground with
the height-spread filter and bins the rest into a 1440-bin planar scan.
"""

# %% Render a sweep
import numpy as np

from shuttle_slam.lidar import LidarModel, raycast_frame
from shuttle_slam.scan import project_to_scan, remove_ground
from shuttle_slam.world import furnished_room

world = furnished_room()
cloud = raycast_frame(world, 0.0, 0.0, 0.0, LidarModel())
print(f"raw sweep: {len(cloud)} points")

# %% Ground removal: 0.2 m cells, keep cells whose height spread is >= 0.3 m
kept = remove_ground(cloud)
at_ground = np.isclose(kept.points[:, 2], -1.8).sum()
print(f"after ground removal: {len(kept)} points; {at_ground} ground-level returns survive "
      f"because they share a 0.2 m cell with a wall foot")

# %% Projection: nearest return per 0.25 degree bearing bin
scan = project_to_scan(kept)
valid = np.isfinite(scan.ranges)
print(f"{valid.sum()} of {len(scan.ranges)} bins hold a return; "
      f"ranges {np.nanmin(scan.ranges):.2f} .. {np.nanmax(scan.ranges):.2f} m")
