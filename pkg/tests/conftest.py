import numpy as np
import pytest

from gmep.channel import RealChannelInstance
from gmep.constellation import build_constellation


@pytest.fixture(scope="session")
def qpsk():
    return build_constellation(4)


@pytest.fixture(scope="session")
def qam16():
    return build_constellation(16)


@pytest.fixture(scope="session")
def qam64():
    return build_constellation(64)


def make_instance(H, u, noise_var_real, noise=None):
    """Real-model instance built by hand (``y = H u + noise``)."""
    H = np.asarray(H, dtype=float)
    u = np.asarray(u, dtype=float)
    y = H @ u if noise is None else H @ u + np.asarray(noise, dtype=float)
    return RealChannelInstance(H, y, float(noise_var_real), u)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
