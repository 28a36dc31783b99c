import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import CRITERIA_LINES  # noqa: E402
from psconrl.envs import toy_counterexample  # noqa: E402


@pytest.fixture
def toy():
    return toy_counterexample(0.9, 0.5275)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)
