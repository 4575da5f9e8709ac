import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mhdlab.spectral import Grid

settings.register_profile(
    "mhdlab",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("mhdlab")


@pytest.fixture(scope="session")
def grid16():
    return Grid(16)


@pytest.fixture(scope="session")
def grid32():
    return Grid(32)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
