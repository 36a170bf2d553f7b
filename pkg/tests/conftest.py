import math

import numpy as np
import pytest

from model import CnlsCoefficients, DomainLayout, build_grid
from pml import PmlParameters


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def linear_coeffs():
    return CnlsCoefficients((0.75,), (1.25,), (0.0,))


@pytest.fixture
def mixed_coeffs():
    return CnlsCoefficients((1.0,), (1.0,), (0.5,))


@pytest.fixture
def cme2_coeffs():
    return CnlsCoefficients((1.0, 0.75), (1.0, 1.0), (0.2, 0.15), gamma=0.5, eps_q=-0.2)


@pytest.fixture
def small_box():
    """6 x 6 domain with 1.2 wide layers, 24 cells across the physical domain."""
    return build_grid(DomainLayout(6.0, 6.0, 1.2, 1.2), 0.25)


@pytest.fixture
def pml_params():
    return PmlParameters(rho=math.pi / 4, hx=3.3, hy=3.3)
