import pytest

from mvdiv.closed_form import solve_equilibrium
from mvdiv.model import ModelParams

FIG1 = dict(a=0.1, b=0.35, rho=0.05, d_bar=0.05, gamma=0.2)
MAXRATE = dict(a=0.1, b=0.35, rho=0.05, d_bar=0.03, gamma=0.3)


@pytest.fixture(scope="session")
def fig1():
    return ModelParams(**FIG1)


@pytest.fixture(scope="session")
def maxrate():
    return ModelParams(**MAXRATE)


@pytest.fixture(scope="session")
def fig1_sol(fig1):
    return solve_equilibrium(fig1)


@pytest.fixture(scope="session")
def maxrate_sol(maxrate):
    return solve_equilibrium(maxrate)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
