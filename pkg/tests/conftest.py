import numpy as np
import pytest

from dualfpf.model import TimeGrid, random_model, scalar_model


@pytest.fixture
def scalar():
    return scalar_model()


@pytest.fixture
def tanh_model():
    return scalar_model(sigma0=0.5, name="SCALAR-TANH")


@pytest.fixture
def model2():
    return random_model(2, 1, seed=11)


@pytest.fixture
def model3():
    return random_model(3, 2, seed=7)


@pytest.fixture
def grid():
    return TimeGrid.from_horizon(1.0, 1e-3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
