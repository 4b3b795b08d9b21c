"""Control-affine quadcopter model on (r, v, eta, eta_dot, T, T_dot).

The physical state is a flat 14-vector::

    [x, y, z, vx, vy, vz, phi, theta, psi, phi_dot, theta_dot, psi_dot, T_dev, T_dot]

and the input is ``u = [u_T, u_phi, u_theta, u_psi]`` where ``u_T`` is the
second derivative of the thrust deviation and the remaining entries are
Euler-angle accelerations. Attitude uses the ZYX (yaw-pitch-roll) convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteState

STATE_DIM = 14
INPUT_DIM = 4

POS = slice(0, 3)
VEL = slice(3, 6)
ETA = slice(6, 9)
ETA_DOT = slice(9, 12)
T_DEV = 12
T_DOT = 13

STATE_NAMES = (
    "x", "y", "z", "vx", "vy", "vz",
    "phi", "theta", "psi", "phi_dot", "theta_dot", "psi_dot",
    "T_dev", "T_dot",
)
INPUT_NAMES = ("u_T", "u_phi", "u_theta", "u_psi")

DEFAULT_DT = 0.01


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 1.5
    gravity: float = 9.81
    inertia_diag: tuple[float, float, float] = (0.02, 0.02, 0.04)

    def __post_init__(self):
        if not self.mass > 0 or not self.gravity > 0:
            raise ValueError("mass and gravity must be positive")
        if len(self.inertia_diag) != 3 or min(self.inertia_diag) <= 0:
            raise ValueError("inertia_diag must hold three positive entries")


def hover_state() -> np.ndarray:
    return np.zeros(STATE_DIM)


def rotation_matrix(eta) -> np.ndarray:
    """Body-to-inertial rotation ``Rz(psi) @ Ry(theta) @ Rx(phi)``."""
    phi, theta, psi = eta
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array([
        [cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
        [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
        [-st, ct * sf, ct * cf],
    ])


def thrust_axis(phi: float, theta: float, psi: float) -> tuple[float, float, float]:
    """Third column of the rotation matrix, ``R(eta) e3``."""
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return (cp * st * cf + sp * sf, sp * st * cf - cp * sf, ct * cf)


def acceleration(x: np.ndarray, p: VehicleParams) -> np.ndarray:
    """Translational acceleration ``-g e3 + (m g + T)/m R(eta) e3``."""
    c = (p.mass * p.gravity + x[T_DEV]) / p.mass
    b0, b1, b2 = thrust_axis(x[6], x[7], x[8])
    return np.array([c * b0, c * b1, c * b2 - p.gravity])


def drift(x: np.ndarray, p: VehicleParams) -> np.ndarray:
    xdot = np.zeros(STATE_DIM)
    xdot[POS] = x[VEL]
    xdot[VEL] = acceleration(x, p)
    xdot[ETA] = x[ETA_DOT]
    xdot[T_DEV] = x[T_DOT]
    return xdot


def apply_input(xdot_drift: np.ndarray, u) -> np.ndarray:
    """Add ``G0 @ u``: Euler accelerations into the eta_ddot rows, u_T into the last row."""
    out = np.array(xdot_drift, dtype=float, copy=True)
    out[ETA_DOT] += u[1:4]
    out[T_DOT] += u[0]
    return out


def vector_field(x: np.ndarray, u, p: VehicleParams) -> np.ndarray:
    return apply_input(drift(x, p), u)


def step_rk4(x: np.ndarray, u, dt: float, p: VehicleParams) -> np.ndarray:
    """One classical RK4 step with ``u`` held constant over ``dt``.

    Raises NonFiniteState if the result contains inf or nan.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=float)
    k1 = vector_field(x, u, p)
    k2 = vector_field(x + 0.5 * dt * k1, u, p)
    k3 = vector_field(x + 0.5 * dt * k2, u, p)
    k4 = vector_field(x + dt * k3, u, p)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("integrator produced a non-finite state")
    return out


def euler_rate_matrix(eta) -> np.ndarray:
    """``E(eta)`` with ``omega_body = E(eta) @ eta_dot`` for ZYX angles."""
    phi, theta, _ = eta[0], eta[1], eta[2]
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    return np.array([
        [1.0, 0.0, -st],
        [0.0, cf, sf * ct],
        [0.0, -sf, cf * ct],
    ])


def euler_rate_to_body_rate(eta, eta_dot) -> np.ndarray:
    return euler_rate_matrix(eta) @ np.asarray(eta_dot, dtype=float)


def body_rate_to_euler_rate(eta, omega) -> np.ndarray:
    return np.linalg.solve(euler_rate_matrix(eta), np.asarray(omega, dtype=float))


def body_torque(u, p: VehicleParams) -> np.ndarray:
    """Display proxy ``tau = I_diag * eta_ddot``; not part of the simulated model."""
    return np.asarray(p.inertia_diag) * np.asarray(u[1:4], dtype=float)
