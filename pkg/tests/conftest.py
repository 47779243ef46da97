import warnings

import numpy as np
import pytest

from cavitrack.detector import DetectorConfig
from cavitrack.modes import ModeSet
from cavitrack.params import SystemParams
from cavitrack.reconstruct import build_grid


@pytest.fixture(scope="session")
def modeset():
    return ModeSet.build()


@pytest.fixture(scope="session")
def params():
    return SystemParams.from_mhz()


@pytest.fixture(scope="session")
def grid(params, modeset):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_grid(params, modeset, DetectorConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
