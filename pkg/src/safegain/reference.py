"""Quintic time-scaled point-to-point reference with a hover hold afterwards."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ReferenceSpec:
    r_start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    r_goal: tuple[float, float, float] = (1.0, 1.0, 1.0)
    T_f: float = 5.0

    def __post_init__(self):
        if not self.T_f > 0:
            raise ValueError("T_f must be positive")
        vals = np.concatenate([self.r_start, self.r_goal])
        if vals.shape != (6,) or not np.all(np.isfinite(vals)):
            raise ValueError("r_start and r_goal must be finite 3-vectors")

    @property
    def delta(self) -> np.ndarray:
        return np.asarray(self.r_goal, dtype=float) - np.asarray(self.r_start, dtype=float)


@dataclass(frozen=True)
class ReferenceSample:
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    jerk: np.ndarray
    snap: np.ndarray
    psi: float = 0.0
    psi_dot: float = 0.0


def quintic_profile(tau: float) -> tuple[float, float, float, float, float]:
    """``sigma = 10 tau^3 - 15 tau^4 + 6 tau^5`` and its first four derivatives."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    t2 = tau * tau
    t3 = t2 * tau
    return (
        10.0 * t3 - 15.0 * t2 * t2 + 6.0 * t3 * t2,
        30.0 * t2 - 60.0 * t3 + 30.0 * t2 * t2,
        60.0 * tau - 180.0 * t2 + 120.0 * t3,
        60.0 - 360.0 * tau + 360.0 * t2,
        -360.0 + 720.0 * tau,
    )


def reference_at(spec: ReferenceSpec, t: float) -> ReferenceSample:
    """Reference sample at time ``t``.

    Past ``T_f`` the goal is held and every derivative is zero, so jerk and
    snap jump at ``T_f``. Desired yaw is zero throughout.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    start = np.asarray(spec.r_start, dtype=float)
    if t > spec.T_f:
        zero = np.zeros(3)
        return ReferenceSample(np.asarray(spec.r_goal, dtype=float), zero, zero, zero, zero)
    s0, s1, s2, s3, s4 = quintic_profile(t / spec.T_f)
    d = spec.delta
    T = spec.T_f
    return ReferenceSample(
        start + d * s0,
        d * (s1 / T),
        d * (s2 / T**2),
        d * (s3 / T**3),
        d * (s4 / T**4),
    )


def snap_bound(spec: ReferenceSpec) -> float:
    """Max of ``||r_d^(4)||``; the quintic snap peaks at the endpoints with ``|sigma''''| = 360``."""
    return 360.0 * float(np.linalg.norm(spec.delta)) / spec.T_f**4
