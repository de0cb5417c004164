from __future__ import annotations

import numpy as np
import pytest

from cmrtqj.bath import BathSpec
from cmrtqj.dynamics import build_problem
from cmrtqj.exciton import SiteBasisModel
from cmrtqj.pulses import step_pulse

DIMER_BATH = BathSpec(reorganization=35.0, cutoff=50.0, temperature=300.0)


def dimer(j, e1=200.0, e2=100.0, e0=-12800.0, dipoles=None):
    return SiteBasisModel([e1, e2], [[0.0, j], [j, 0.0]], e0, dipoles)


def pulsed_problem(j, carrier=13000.0, g=(100.0, 200.0), t_max=1000.0, dt=1.0, t1=100.0):
    return build_problem(dimer(j), DIMER_BATH, step_pulse(t1, carrier, g), t_max, dt)


@pytest.fixture(scope="session")
def problem_j120():
    return pulsed_problem(120.0)


@pytest.fixture(scope="session")
def problem_j20():
    return pulsed_problem(20.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


#: (criterion, passed, detail) lines collected by the acceptance suite
VERDICTS: list = []


def verdict(criterion: str, passed: bool, detail: str) -> bool:
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} ({detail})"
    VERDICTS.append((criterion, passed, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(VERDICTS, key=lambda v: v[0]):
        terminalreporter.write_line(line)
