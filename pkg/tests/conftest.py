import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import dtrank as dt

settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Shared sink for the one-line acceptance verdicts."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def d2_sample():
    """Two-record micro fixture with hand-computed loss and score values."""
    return dt.TruncatedSample.from_arrays(
        np.array([1.0, 2.0]),
        np.array([[0.0], [1.0]]),
        np.array([0.5, 1.8]),
        np.array([1.5, 2.4]),
    )


@pytest.fixture
def small_truncated_sample():
    """A reproducible n=40 sample with two covariates and real truncation."""
    rng = np.random.default_rng(42)
    n = 40
    kept = {"y": [], "x": [], "l": [], "r": []}
    count = 0
    while count < n:
        x = np.array([float(rng.integers(0, 2)), rng.uniform(0.0, 2.0)])
        y = x[1] + rng.standard_normal()
        lo = rng.uniform(-2.0, 1.0)
        hi = rng.uniform(1.0, 4.0)
        if lo < y < hi:
            kept["y"].append(y)
            kept["x"].append(x)
            kept["l"].append(lo)
            kept["r"].append(hi)
            count += 1
    return dt.TruncatedSample.from_arrays(
        np.array(kept["y"]), np.array(kept["x"]),
        np.array(kept["l"]), np.array(kept["r"]),
    )
