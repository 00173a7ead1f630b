import pytest
from hypothesis import HealthCheck, settings

from shuttle_slam import bench

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def room_grid():
    return bench.room_grid(0.1)


@pytest.fixture(scope="session")
def room_pyramid():
    return bench.room_pyramid()
