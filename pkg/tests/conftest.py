import numpy as np
import pytest

from csilab.chansim import ArrayGeometry, ScenarioConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_scenario():
    """4x2 array (n_c = 16), three clusters; cheap enough for unit tests."""
    return ScenarioConfig(geometry=ArrayGeometry(4, 2), num_clusters=3, paths_per_cluster=3, seed=99)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
