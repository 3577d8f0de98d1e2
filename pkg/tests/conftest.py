import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rvio.lie import so3_exp
from rvio.state import RobocentricState

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))


def random_state(rng, scale=None):
    return RobocentricState(
        C_ri=random_rotation(rng),
        r_ir=rng.normal(size=3),
        g_r=random_rotation(rng, 0.3) @ np.array([0.0, 0.0, 9.81]),
        C_rv=random_rotation(rng, 1.0),
        r_vr=rng.normal(size=3),
        v=rng.normal(size=3),
        b_w=0.01 * rng.normal(size=3),
        b_a=0.1 * rng.normal(size=3),
        scale=rng.uniform(0.5, 2.0) if scale is None else scale,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance criterion, printed after the test summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(line)
