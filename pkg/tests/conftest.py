import numpy as np
import pytest

from floodadapt.config import Config
from floodadapt.env import CityBundle
from floodadapt.network import CitySpec, generate_synthetic_city


@pytest.fixture(scope="session")
def toy_bundle():
    """4-zone 16x16 city used across the suite; built once."""
    grid, net, demand, attrs = generate_synthetic_city(
        CitySpec(zones=4, grid=(16, 16), trips=500, seed=7))
    return CityBundle(grid, net, demand, attrs)


@pytest.fixture()
def cfg():
    return Config()


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
