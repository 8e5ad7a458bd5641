import math

import numpy as np
import pytest

from aclab.geometry import band, latitude, make_geometry
from aclab.potential import canonical
from aclab.profiles import build_profiles
from aclab.solver import solve_ladder

LADDER = (0.16, 0.08, 0.04, 0.02)
R_CMC = math.pi / 3


@pytest.fixture(scope="session")
def profiles():
    return build_profiles(canonical())


@pytest.fixture(scope="session")
def torus():
    return make_geometry({"kind": "torus"})


@pytest.fixture(scope="session")
def sphere():
    return make_geometry({"kind": "sphere"})


@pytest.fixture(scope="session")
def torus_band():
    return band(math.pi / 2, 3 * math.pi / 2)


@pytest.fixture(scope="session")
def cmc_latitude():
    return latitude(R_CMC)


@pytest.fixture(scope="session")
def h_cmc(profiles):
    """Constant h with 2 h / e0 = cot(pi/3)."""
    return 0.5 * profiles.e0 / math.tan(R_CMC)


@pytest.fixture(scope="session")
def torus_ladder(torus, torus_band, profiles):
    return solve_ladder(torus, torus_band, 0.0, profiles, LADDER)


@pytest.fixture(scope="session")
def sphere_ladder(sphere, cmc_latitude, h_cmc, profiles):
    return solve_ladder(sphere, cmc_latitude, h_cmc, profiles, LADDER)


def rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
