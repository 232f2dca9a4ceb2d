import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bfda.dataset import FunctionalDataset

settings.register_profile(
    "bfda", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("bfda")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_common(rng):
    """Twelve noisy sine curves on 15 common points."""
    t = np.linspace(0, math.pi / 2, 15)
    Y = 3 * np.sin(4 * t)[:, None] + rng.standard_normal((15, 12))
    return FunctionalDataset.from_matrix(t, Y)


def random_spd(rng, p, scale=1.0):
    X = rng.standard_normal((p, p + 2))
    return scale * (X @ X.T / (p + 2) + 0.5 * np.eye(p))


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance():
    """Record one verdict line per acceptance criterion."""

    def record(criterion, title, passed, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {title} -- {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
