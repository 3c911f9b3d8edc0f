import numpy as np
import pytest

from fmda import TimeGrid, default_synthetic_spec, generate_synthetic
from fmda.mixrhlp import MixRhlpParams

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_data():
    return generate_synthetic(default_synthetic_spec(seed=0))


def random_params(rng, K, R, d, scale=1.0):
    """Random valid parameters; ``R`` is one count per sub-class."""
    alpha = rng.dirichlet(np.ones(K))
    return MixRhlpParams(
        alpha,
        [rng.normal(scale=2.0, size=(r - 1, 2)) for r in R],
        [rng.normal(scale=scale, size=(r, d)) for r in R],
        [rng.uniform(0.3, 2.0, size=r) for r in R],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_grid():
    return TimeGrid(np.array([0.0, 0.3, 0.55, 1.0]))
