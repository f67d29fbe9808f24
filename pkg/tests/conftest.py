import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pgflow.fields import SpaceTimeGrid
from pgflow.problem import TorusGeometry

settings.register_profile(
    "pgflow", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("pgflow")

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_lines(request):
    return request.config.stash[ACCEPTANCE_LINES]


@pytest.fixture
def grid1d():
    def make(n_t=17, n_x=32, T=0.2, n_control=1):
        return SpaceTimeGrid(TorusGeometry(1, n_control, 1), T, n_t, n_x)

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
