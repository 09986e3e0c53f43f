import numpy as np
import pytest

from anisns.spectral import Grid


@pytest.fixture
def grid16():
    return Grid(16, 16)


@pytest.fixture
def grid8():
    return Grid(8, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
