import numpy as np
import pytest

from semflow.core import CameraCalib


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def calib():
    # f = 100, B = 0.5 -> C = 50
    return CameraCalib(100.0, 0.5, 40.0, 30.0)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one summary line per acceptance criterion."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
