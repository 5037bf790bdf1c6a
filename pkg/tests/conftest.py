import numpy as np
import pytest

from poroinfsup.mesh import unit_square_mesh
from poroinfsup.problem import BoundaryConfig

SIDES = ("bottom", "right", "top", "left")


def uniform_bc(u_tag, p_tag):
    return BoundaryConfig.uniform(SIDES, u_tag, p_tag)


def mixed_bc():
    """Traction-free and drained on top, clamped and sealed elsewhere."""
    return BoundaryConfig({
        "bottom": ("essential", "natural"),
        "right": ("essential", "natural"),
        "left": ("essential", "natural"),
        "top": ("natural", "essential"),
    })


@pytest.fixture(scope="session")
def mesh4():
    return unit_square_mesh(4)


@pytest.fixture(scope="session")
def mesh8():
    return unit_square_mesh(8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
