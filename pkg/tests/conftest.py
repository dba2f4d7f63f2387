import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from isoradial.delaunay import lattice

settings.register_profile(
    "default", max_examples=25, deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")

_LINES_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = []


@pytest.fixture
def record(request):
    """Append a line to the criterion summary printed at the end of the run."""
    lines = request.config.stash[_LINES_KEY]

    def add(line: str):
        lines.append(line)

    return add


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def square():
    return lattice("square", 5)


@pytest.fixture(scope="session")
def triangular():
    return lattice("triangular", 5)


@pytest.fixture(scope="session")
def quad():
    return lattice("quad_tiling", 5)


@pytest.fixture(scope="session")
def lattices(square, triangular, quad):
    return {"square": square, "triangular": triangular, "quad_tiling": quad}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

