"""Flat-output error state, its linear chain dynamics and dynamic inversion.

The error state ``z`` (14-vector) is ordered ``[e_r, e_v, e_a, e_j, psi, psi_dot]``.
Position and yaw are flat outputs: ``a(x) = -g e3 + c R(eta) e3`` with
``c = (m g + T)/m`` depends only on ``(T, eta)``, so differentiating twice in
time makes the snap affine in ``(T_ddot, eta_ddot) = u``::

    a_ddot = M[:3] @ u + n[:3],   psi_ddot = u_psi

which is what :func:`inversion_maps` returns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import VehicleParams, acceleration, thrust_axis
from .errors import AttitudeSingular, IllConditioned, ThrustSingular
from .reference import ReferenceSample

Z_DIM = 14
E_R = slice(0, 3)
E_V = slice(3, 6)
E_A = slice(6, 9)
E_J = slice(9, 12)
Z_PSI = 12
Z_PSI_DOT = 13

Z_NAMES = (
    "e_rx", "e_ry", "e_rz", "e_vx", "e_vy", "e_vz",
    "e_ax", "e_ay", "e_az", "e_jx", "e_jy", "e_jz", "psi", "psi_dot",
)

DEFAULT_COND_BOUND = 1e6
_HALF_PI = 0.5 * math.pi


def a_ext() -> np.ndarray:
    A = np.zeros((Z_DIM, Z_DIM))
    A[0:9, 3:12] = np.eye(9)
    A[Z_PSI, Z_PSI_DOT] = 1.0
    return A


def b_ext() -> np.ndarray:
    B = np.zeros((Z_DIM, 4))
    B[E_J, 0:3] = np.eye(3)
    B[Z_PSI_DOT, 3] = 1.0
    return B


A_EXT = a_ext()
B_EXT = b_ext()
A_EXT.flags.writeable = False
B_EXT.flags.writeable = False


@dataclass(frozen=True)
class InversionMaps:
    M: np.ndarray
    n: np.ndarray

    @property
    def cond(self) -> float:
        return float(np.linalg.cond(self.M))


def _check_attitude(x: np.ndarray) -> None:
    if not (abs(x[6]) < _HALF_PI and abs(x[7]) < _HALF_PI):
        raise AttitudeSingular(f"roll/pitch outside (-pi/2, pi/2): phi={x[6]:.4g}, theta={x[7]:.4g}")


def thrust_axis_jacobian(phi: float, theta: float, psi: float) -> np.ndarray:
    """``d(R(eta) e3)/d eta`` as a 3x3 matrix (columns: phi, theta, psi)."""
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array([
        [sp * cf - sf * st * cp, cf * cp * ct, sf * cp - sp * st * cf],
        [-sf * sp * st - cf * cp, sp * cf * ct, sf * sp + st * cf * cp],
        [-sf * ct, -st * cf, 0.0],
    ])


def thrust_axis_curvature(eta, eta_dot) -> np.ndarray:
    """Quadratic term ``sum_ij d2(R e3)/d eta_i d eta_j * eta_dot_i * eta_dot_j``."""
    phi, theta, psi = eta
    df, dt, dp = eta_dot
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    b0 = cp * st * cf + sp * sf
    b1 = sp * st * cf - cp * sf
    b2 = ct * cf
    q0 = (
        -(df * df + dp * dp) * b0
        - dt * dt * st * cf * cp
        + 2.0 * df * dp * (sf * sp * st + cf * cp)
        - 2.0 * df * dt * sf * cp * ct
        - 2.0 * dp * dt * sp * cf * ct
    )
    q1 = (
        -(df * df + dp * dp) * b1
        - dt * dt * sp * st * cf
        - 2.0 * df * dp * (sf * st * cp - sp * cf)
        - 2.0 * df * dt * sf * sp * ct
        + 2.0 * dp * dt * cf * cp * ct
    )
    q2 = -(df * df + dt * dt) * b2 + 2.0 * df * dt * sf * st
    return np.array([q0, q1, q2])


def jerk(x: np.ndarray, p: VehicleParams) -> np.ndarray:
    """Time derivative of :func:`~safegain.dynamics.acceleration` along the flow."""
    c = (p.mass * p.gravity + x[12]) / p.mass
    b = np.array(thrust_axis(x[6], x[7], x[8]))
    J = thrust_axis_jacobian(x[6], x[7], x[8])
    return (x[13] / p.mass) * b + c * (J @ x[9:12])


def error_state(x: np.ndarray, ref: ReferenceSample, p: VehicleParams) -> np.ndarray:
    _check_attitude(x)
    z = np.empty(Z_DIM)
    z[E_R] = x[0:3] - ref.pos
    z[E_V] = x[3:6] - ref.vel
    z[E_A] = acceleration(x, p) - ref.acc
    z[E_J] = jerk(x, p) - ref.jerk
    z[Z_PSI] = x[8] - ref.psi
    z[Z_PSI_DOT] = x[11] - ref.psi_dot
    return z


def inversion_maps(x: np.ndarray, p: VehicleParams) -> InversionMaps:
    """``M(x), n(x)`` with ``[snap; psi_ddot] = M u + n``."""
    _check_attitude(x)
    thrust = p.mass * p.gravity + x[12]
    if not thrust > 0:
        raise ThrustSingular(f"total thrust m*g + T_dev = {thrust:.4g} is not positive")
    c = thrust / p.mass
    phi, theta, psi = x[6], x[7], x[8]
    b = np.array(thrust_axis(phi, theta, psi))
    J = thrust_axis_jacobian(phi, theta, psi)
    eta_dot = x[9:12]

    M = np.zeros((4, 4))
    M[0:3, 0] = b / p.mass
    M[0:3, 1:4] = c * J
    M[3, 3] = 1.0
    n = np.zeros(4)
    n[0:3] = (2.0 * x[13] / p.mass) * (J @ eta_dot) + c * thrust_axis_curvature(x[6:9], eta_dot)
    return InversionMaps(M, n)


def invert(s, x: np.ndarray, p: VehicleParams, cond_bound: float = DEFAULT_COND_BOUND) -> np.ndarray:
    """Physical input ``u = M^{-1}(s - n)`` realising virtual input ``s``."""
    maps = inversion_maps(x, p)
    cond = maps.cond
    if not cond <= cond_bound:
        raise IllConditioned(f"cond(M) = {cond:.3g} exceeds bound {cond_bound:.3g}")
    return np.linalg.solve(maps.M, np.asarray(s, dtype=float) - maps.n)


def virtual_input(z: np.ndarray, K: np.ndarray) -> np.ndarray:
    return -(K @ z)
