import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tamed_mhd.spectral import GridSpec

settings.register_profile("repo", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

ACCEPTANCE_LINES = {}


@pytest.fixture
def g8():
    return GridSpec(8)


@pytest.fixture
def g16():
    return GridSpec(16)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
