import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mcdirichlet import Ball, Box, SimConfig

settings.register_profile("pkg", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")


@pytest.fixture
def unit_ball():
    return Ball((0.0, 0.0, 0.0), 1.0)


@pytest.fixture
def unit_cube():
    return Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))


@pytest.fixture
def fast_cfg():
    return SimConfig(seed=7, h=4e-3)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
