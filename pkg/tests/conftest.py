import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from covest.gp import GridGeometry
from covest.grids import training_grid

settings.register_profile("covest", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("covest")


@pytest.fixture(scope="session")
def geom16():
    return GridGeometry(16, 16)


@pytest.fixture(scope="session")
def geom4():
    return GridGeometry(4, 4)


@pytest.fixture(scope="session")
def small_grid(geom16):
    """A 67 x 10 training grid (670 configurations) for smoke runs."""
    return training_grid(geom16, 67, 10)


@pytest.fixture(scope="session")
def tiny_grid(geom16):
    return training_grid(geom16, 11, 5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
