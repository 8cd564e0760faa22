import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sisa.dataset import gen_synthetic

settings.register_profile("sisa", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("sisa")


@pytest.fixture(scope="session")
def blobs():
    """Four well separated classes, 400 points, 5 features."""
    return gen_synthetic(400, 5, 4, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, line = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {line}")
