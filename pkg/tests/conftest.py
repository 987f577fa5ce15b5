import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20251016)


# filled by test_acceptance.py; one line per criterion
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
