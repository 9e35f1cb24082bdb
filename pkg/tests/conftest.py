import numpy as np
import pytest

from coulombgas import FreeKernel, TorusKernel, solve_quadratic_equilibrium


@pytest.fixture(scope="session")
def kernel():
    return TorusKernel(3)


@pytest.fixture(scope="session")
def free_kernel():
    return FreeKernel(3)


@pytest.fixture(scope="session")
def eq():
    return solve_quadratic_equilibrium()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
