import math

import numpy as np
import pytest


def sem(x):
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1) / math.sqrt(x.size))


@pytest.fixture
def sem_fn():
    return sem


ACCEPTANCE_LINES = {}


@pytest.fixture
def record():
    """Store and print a one-line verdict for an acceptance check."""

    def _record(number, title, ok, detail):
        line = f"[{number:2d}] {'PASS' if ok else 'FAIL'} {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
