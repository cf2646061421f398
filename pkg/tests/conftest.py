import numpy as np
import pytest

from bnslab.schedule import build_linear_schedule


@pytest.fixture(scope="session")
def default_schedule():
    """The 1000-step linear schedule used by the Gaussian studies."""
    return build_linear_schedule(n_steps=1000, beta_min=1e-4, beta_max=0.02)


@pytest.fixture(scope="session")
def toy_schedule():
    """Short schedule sized for the 2D circles experiments."""
    return build_linear_schedule(n_steps=250, beta_min=4e-4, beta_max=0.08)


@pytest.fixture(scope="session")
def tiny_schedule():
    return build_linear_schedule(n_steps=20, beta_min=1e-3, beta_max=0.1)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
