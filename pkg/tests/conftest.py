import math

import numpy as np
import pytest

from rdlvm.model import LogLikMatrix

ACCEPTANCE_LINES = []


@pytest.fixture
def symmetric():
    """2x2 instance with p(x_i) = 1/2 under the uniform prior."""
    return LogLikMatrix(np.log([[0.9, 0.1], [0.1, 0.9]]))


@pytest.fixture
def dominating():
    """Column 0 dominates column 1 for every data point."""
    return LogLikMatrix(np.array([[0.0, math.log(0.5)], [0.0, math.log(0.5)]]))


def random_lik(rng, n, m, scale=2.0):
    return LogLikMatrix(rng.normal(size=(n, m)) * scale)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
