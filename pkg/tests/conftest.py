import numpy as np
import pytest

from psforensics.imaging import ImageBuffer


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def rgb(rng):
    return ImageBuffer(rng.integers(0, 256, size=(24, 32, 3), dtype=np.uint8))


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: long-running acceptance criteria")


# acceptance criteria lines, echoed in the terminal summary so they survive output capture
CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(CRITERIA):
            terminalreporter.write_line(line)
