import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from acceptance_log import LINES as ACCEPTANCE_LINES
from dynamix import backend

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))

BACKENDS = ["python"] + (["compiled"] if backend.compiled is not None else [])


@pytest.fixture(params=BACKENDS)
def kernels(request):
    """Each kernel implementation in turn."""
    return backend.reference if request.param == "python" else backend.compiled


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
