import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lioekf import manifold  # noqa: E402
from lioekf.state import NavState  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_state(rng, scale=1.0):
    """A NavState with random attitude and moderate euclidean components."""
    axis = rng.standard_normal(3)
    r = axis / np.linalg.norm(axis) * rng.uniform(0, 2.5)
    return NavState(
        rot=manifold.exp_map(r),
        pos=rng.standard_normal(3) * scale,
        vel=rng.standard_normal(3) * scale,
        bias_gyro=rng.standard_normal(3) * 0.01,
        bias_acc=rng.standard_normal(3) * 0.05,
        gravity=np.array([0.0, 0.0, -9.81]) + rng.standard_normal(3) * 0.05,
    )


# acceptance lines are collected here and repeated after the test summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
