import numpy as np
import pytest

from nlipol.interference import InterferometerConfig

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def config():
    return InterferometerConfig()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_line():
    """Record a one-line verdict; it is echoed at once and again in the run summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)

    return record
