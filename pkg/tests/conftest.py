"""Shared fixtures and the acceptance summary printed at the end of a run."""

import numpy as np
import pytest

from randvort.config import load_config
from randvort.grid import GridSpec

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def grid16():
    return GridSpec(16)


@pytest.fixture(scope="session")
def grid32():
    return GridSpec(32)


@pytest.fixture(scope="session")
def kato_small():
    return load_config(preset="kato_small")


@pytest.fixture(scope="session")
def kato_small_run(kato_small):
    """The shipped kato_small solve on path 0, shared by several checks."""
    import time

    scn = kato_small.scenario()
    t0 = time.perf_counter()
    prep, rec = scn.solve(0)
    return prep, rec, time.perf_counter() - t0


@pytest.fixture
def acceptance():
    """Record one pass/fail line for the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {title} -- {detail}")
        print(ACCEPTANCE_LINES[-1])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
