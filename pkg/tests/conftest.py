import numpy as np
import pytest

from astgcrn.data import RawSeries, split_and_window, synth_series


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    """Short synthetic series: 4 nodes, windows of 3 -> 3."""
    series = RawSeries(synth_series(nodes=4, steps=120, seed=3))
    return split_and_window(series, 3, 3)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
