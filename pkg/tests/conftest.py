import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from popbal.core import MaterialProperties, SimulationConfig, build_grid

settings.register_profile("popbal", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("popbal")


@pytest.fixture
def material():
    return MaterialProperties()


@pytest.fixture
def coarse_config():
    """10 um bins, short horizon: a run takes well under a second."""
    return SimulationConfig(grid=build_grid(1200, 600, 10, 10), t_max=10.0, output_sampling=21)


@pytest.fixture
def base_config():
    """Desk-scale base case: 5 um bins, 30 min."""
    return SimulationConfig(grid=build_grid(1200, 600, 5, 5), t_max=30.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
