import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bevplan.trajectory import HORIZON, RoutePolyline, Trajectory

settings.register_profile(
    "bevplan", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("bevplan")


def straight_traj(v=8.0, y=0.0, x0=0.0, a=0.0, dt=0.5):
    """Constant-speed trajectory along +x at lateral position ``y``."""
    k = np.arange(1, HORIZON + 1)
    states = np.zeros((HORIZON, 6))
    states[:, 0] = x0 + v * dt * k
    states[:, 1] = y
    states[:, 4] = v
    states[:, 5] = a
    return Trajectory(states, dt)


def traj_from_xy(xy, v=8.0):
    states = np.zeros((HORIZON, 6))
    states[:, :2] = xy
    states[:, 4] = v
    return Trajectory(states)


@pytest.fixture
def straight_route():
    return RoutePolyline([[-20.0, 0.0], [200.0, 0.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled by test_acceptance and echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
