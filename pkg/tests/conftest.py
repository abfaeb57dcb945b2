import numpy as np
import pytest

from ksmaster.economy import EconomyParams
from ksmaster.measures import Grid


@pytest.fixture
def params():
    return EconomyParams()


@pytest.fixture
def grid():
    return Grid([0.0, 2.0, 6.0, 15.0, 30.0], [0.0, 5.0, 12.0, 30.0])


def random_coefficients(grid, rng, n=None):
    shape = (grid.d,) if n is None else (n, grid.d)
    M = rng.exponential(size=shape)
    return M / np.expand_dims(M @ grid.slot_widths, -1)


# acceptance summary: one line per criterion, printed after the run
ACCEPTANCE = []


def record(n: int, name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.append((n, name, bool(ok), detail))
    assert ok, f"criterion {n} ({name}): {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, name, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {name}: {detail}")
