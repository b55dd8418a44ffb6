import numpy as np
import pytest

from phasedistill.gaussian_core import SqueezedModeParams

# measured input state of the experiment (shot-noise units)
VX, VP = 0.32, 8.5


@pytest.fixture
def state():
    return SqueezedModeParams(VX, VP)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[number])
