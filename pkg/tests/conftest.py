import numpy as np
import pytest

from safegain.certify import (DEFAULT_AXIS_POLES, DEFAULT_YAW_POLES, axis_levels_from_poles,
                              build_gain_table, yaw_levels_from_poles)
from safegain.dynamics import VehicleParams, acceleration, vector_field
from safegain.reference import ReferenceSpec, snap_bound


@pytest.fixture
def params():
    return VehicleParams()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def default_table():
    """The default 54-action certified table (built once per session)."""
    return build_gain_table(axis_levels_from_poles(DEFAULT_AXIS_POLES),
                            yaw_levels_from_poles(DEFAULT_YAW_POLES),
                            snap_bound(ReferenceSpec()))


@pytest.fixture(scope="session")
def single_table():
    """Fixed-gain baseline: one axis level (lambda = 2.5), one yaw level (mu = 4)."""
    return build_gain_table(axis_levels_from_poles([2.5]), yaw_levels_from_poles([4.0]),
                            snap_bound(ReferenceSpec()))


def random_admissible_state(rng, att=0.4, rate=1.0):
    """Random state well inside the Euler-angle validity region with positive thrust."""
    x = np.zeros(14)
    x[0:3] = rng.uniform(-2, 2, 3)
    x[3:6] = rng.uniform(-2, 2, 3)
    x[6:8] = rng.uniform(-att, att, 2)
    x[8] = rng.uniform(-np.pi, np.pi)
    x[9:12] = rng.uniform(-rate, rate, 3)
    x[12] = rng.uniform(-3, 3)
    x[13] = rng.uniform(-5, 5)
    return x


def flow(x0, u, t_end, p, substeps=20):
    """Constant-input RK4 flow over ``t_end`` (either sign) in small substeps."""
    x = np.array(x0, dtype=float)
    h = t_end / substeps
    for _ in range(substeps):
        k1 = vector_field(x, u, p)
        k2 = vector_field(x + 0.5 * h * k1, u, p)
        k3 = vector_field(x + 0.5 * h * k2, u, p)
        k4 = vector_field(x + h * k3, u, p)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def snap_oracle(x0, u, p, h=1e-3):
    """[snap; psi_ddot] by a second central difference of a(x(t)) and psi(t) along the exact flow."""
    fwd, bwd = flow(x0, u, h, p), flow(x0, u, -h, p)
    snap = (acceleration(fwd, p) - 2 * acceleration(x0, p) + acceleration(bwd, p)) / h**2
    psi_dd = (fwd[8] - 2 * x0[8] + bwd[8]) / h**2
    return np.append(snap, psi_dd)


ACCEPTANCE_LINES: dict[str, str] = {}


def record_acceptance(criterion: str, passed: bool, detail: str) -> None:
    line = f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
