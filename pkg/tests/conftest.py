import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_nv_case(rng, n_max=100):
    """Center, observations and weights as used throughout the normal-variance checks."""
    m = rng.uniform(-5, 5)
    n = int(rng.integers(1, n_max + 1))
    xs = rng.uniform(m - 10, m + 10, n)
    ws = rng.uniform(0, 5, n)
    if not np.any(ws > 0):
        ws[0] = 1.0
    return m, xs, ws


# one line per acceptance criterion, shown at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
