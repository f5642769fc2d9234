import numpy as np
import pytest

from pohozaev_lab.fields import CoefficientH
from pohozaev_lab.geometry import Domain

ACCEPTANCE_LINES = []


@pytest.fixture
def ball():
    return Domain.unit_ball()


@pytest.fixture
def h_zero():
    return CoefficientH.constant(0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
