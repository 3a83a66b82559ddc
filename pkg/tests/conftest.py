import numpy as np
import pytest

from brinkfric import build_grid, make_partition
from brinkfric.operators import get_ops


@pytest.fixture(scope="session")
def grid8():
    return build_grid(8, 8)


@pytest.fixture(scope="session")
def grid16():
    return build_grid(16, 16)


def random_admissible(grid, rng, divfree=False):
    ops = get_ops(grid)
    w = ops.extend(rng.standard_normal(ops.free.size))
    return ops.project_divfree(w) if divfree else w


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def partition(grid, g=0.5):
    return make_partition(grid, g)


# acceptance verdicts, printed once per criterion at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
