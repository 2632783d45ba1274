import numpy as np
import pytest

from cohesive_pf.laws import make_law
from cohesive_pf.surface import gscal_curve

CURVE_AMPS = np.concatenate([[0.02, 0.05], np.linspace(0.1, 1.0, 10), np.linspace(1.25, 3.0, 8), [3.5, 4.0, 5.0]])


@pytest.fixture(scope="session")
def curve():
    """ell = 1 surface density curve on [0.02, 5] (T ladder 16, 32)."""
    return gscal_curve(1.0, CURVE_AMPS, T_ladder=(16, 32), nodes_per_unit=128)


@pytest.fixture(scope="session")
def law1():
    return make_law("euclidean_squared", 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
