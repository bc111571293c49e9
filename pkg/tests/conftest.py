import numpy as np
import pytest

from irrnn.grid import Dataset, GroundTruth, make_grid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_dataset(rng):
    grid = make_grid([4, 3, 2])
    N, J = 6, 2
    X = rng.normal(size=(N, J))
    beta = rng.normal(size=(J, grid.V)) * (rng.random((J, grid.V)) > 0.5)
    alpha = rng.normal(size=(N, grid.V))
    sigma2 = rng.uniform(0.5, 2.0, grid.V)
    noise = rng.normal(size=(N, grid.V))
    Y = X @ beta + alpha + noise
    return Dataset(grid, X, Y, GroundTruth(beta, alpha, sigma2, None, noise))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
