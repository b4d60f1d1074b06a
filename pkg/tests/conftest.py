import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spinflow.functionals import FlowConstants, random_configuration
from spinflow.grid import Grid

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid32():
    return Grid(2, 32)


@pytest.fixture(scope="session")
def grid64():
    return Grid(2, 64)


@pytest.fixture(scope="session")
def config32(grid32):
    return random_configuration(grid32, seed=11, amp=0.05)


@pytest.fixture
def forward_constants():
    return FlowConstants(tau=1.0, lam=0.0, c=2.0)


def sup(a):
    return float(np.max(np.abs(a)))
