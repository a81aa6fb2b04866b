import numpy as np
import pytest

from aquamar.mpc import MpcConfig
from aquamar.scenario import Scenario, build_world, fit_forecaster
from aquamar.weather import SynthWeatherConfig


@pytest.fixture(scope="session")
def world14():
    """14 training days of exploration driving, reused across modules."""
    sc = Scenario(
        controller="never",
        season_days=5.0,
        training_days=14.0,
        seed=3,
        weather=SynthWeatherConfig(rain_rate_per_day=0.10, seed=11),
        mpc=MpcConfig(replan_every=6),
    )
    return build_world(sc)


@pytest.fixture(scope="session")
def fitted14(world14):
    return fit_forecaster(world14)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
