import numpy as np
import pytest
from hypothesis import settings

from opincl.gridfn import Grid
from opincl.inclusion_solver import MultiMap
from opincl.setval import CompactSet

settings.register_profile("opincl", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("opincl")


def affine_map(a, b):
    """F(t, x) = {a x + b} on the real line, modulus |a|."""
    return MultiMap.translate(CompactSet([[0.0]]), lambda T, X: a * X + b, abs(a))


@pytest.fixture
def unit_grid():
    return Grid.interval(0.0, 1.0, 1001)


@pytest.fixture
def small_grid():
    return Grid.interval(0.0, 1.0, 51)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
