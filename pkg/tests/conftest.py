import numpy as np
import pytest

from sebm.model import ModelConfig, build_system, simulate
from sebm.observation import observe_trajectory
from sebm.posterior import GAUSSIAN_MEAN, fit_climatological_prior


@pytest.fixture(scope="session")
def system():
    return build_system(ModelConfig())


@pytest.fixture(scope="session")
def synthetic(system):
    """A short truth with its observations and climatological prior, fixed seed."""
    rng = np.random.default_rng(20240611)
    traj = simulate(GAUSSIAN_MEAN, system.config, system.ops, system.noise, rng, N=40)
    obs = observe_trajectory(traj, system.config, rng)
    return traj, obs, fit_climatological_prior(obs)
