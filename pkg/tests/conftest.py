from __future__ import annotations

import datetime as dt

import pytest

from delib.evaluation_model import default_model
from delib.run_config import RunConfig

DATE = dt.date(2025, 10, 1)


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture(scope="session")
def run():
    # RunConfig is frozen, so sharing one instance is safe
    return RunConfig(current_date=DATE)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance") or sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    RESULTS = mod.RESULTS
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
