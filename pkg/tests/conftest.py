import numpy as np
import pytest

from jointpred.data import Dataset
from jointpred.demo import fixture_path, load_height_weight


@pytest.fixture(scope="session")
def height_weight():
    return load_height_weight(fixture_path())


def make_additive(n=300, seed=0, rho=0.7):
    """Two responses = smooth mean in two covariates + correlated normal noise."""
    rng = np.random.default_rng(seed)
    z = rng.uniform(0, 1, (n, 2))
    e = rng.multivariate_normal([0, 0], [[1, rho], [rho, 1]], n)
    x = np.column_stack([3 * z[:, 0] + e[:, 0], np.exp(z[:, 1]) + e[:, 1]])
    return Dataset(z, x, ("a", "b"), ("x", "y"))


@pytest.fixture
def additive():
    return make_additive()


# -- acceptance reporting -------------------------------------------------------

def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def acceptance_log(request):
    return request.config.acceptance_lines


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: s.split("criterion ")[1]):
            terminalreporter.write_line(line)
