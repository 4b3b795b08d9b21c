"""Gain-scheduling decision environment over a certified gain table.

One decision selects a table row and holds it for ``dwell_steps`` inner
integration steps. Each inner step closes the loop ``s = -K z``,
``u = M^{-1}(s - n)`` and advances the physical state with RK4.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .certify import GainTable, reachable_radius
from .errors import (AttitudeSingular, EpisodeFinished, IllConditioned, NonFiniteState,
                     ThrustSingular)
from .flatness import DEFAULT_COND_BOUND, E_R, E_V, error_state, invert
from .reference import ReferenceSample, ReferenceSpec, reference_at

NO_ACTION = -1
OBS_DIM = dyn.STATE_DIM + 1


class Violation(enum.Enum):
    NON_FINITE = "NonFinite"
    ATTITUDE = "Attitude"
    POSITION = "Position"
    VELOCITY = "Velocity"
    Z_NORM = "ZNorm"


@dataclass(frozen=True)
class SafetyLimits:
    max_roll_pitch: float = 0.60
    max_pos_err_norm: float = 5.0
    max_vel_norm: float = 10.0
    z_norm_delta: float | None = None   # None: derived from the table, see default_z_norm_delta

    def __post_init__(self):
        vals = [self.max_roll_pitch, self.max_pos_err_norm, self.max_vel_norm]
        if self.z_norm_delta is not None:
            vals.append(self.z_norm_delta)
        if min(vals) <= 0:
            raise ValueError("safety limits must be positive")


@dataclass(frozen=True)
class RewardWeights:
    w_r: float = 1.0
    w_v: float = 0.1
    w_eta: float = 0.5
    w_omega: float = 0.05
    w_u: float = 1e-4
    w_s: float = 1.0
    terminal_penalty: float = -10000.0

    def __post_init__(self):
        if min(self.w_r, self.w_v, self.w_eta, self.w_omega, self.w_u, self.w_s) < 0:
            raise ValueError("reward weights must be nonnegative")
        if not self.terminal_penalty < 0:
            raise ValueError("terminal_penalty must be negative")


@dataclass(frozen=True)
class InitDistribution:
    """Uniform box around ``r_start``; rates and thrust deviation start at zero."""

    pos_halfwidth: float = 0.5
    att_halfwidth: float = 0.05

    def __post_init__(self):
        if self.pos_halfwidth < 0 or self.att_halfwidth < 0:
            raise ValueError("init half-widths must be nonnegative")

    def sample(self, spec: ReferenceSpec, rng: np.random.Generator) -> np.ndarray:
        x = dyn.hover_state()
        x[dyn.POS] = np.asarray(spec.r_start) + rng.uniform(-1.0, 1.0, 3) * self.pos_halfwidth
        x[dyn.ETA] = rng.uniform(-1.0, 1.0, 3) * self.att_halfwidth
        return x

    def z_radius(self, p: dyn.VehicleParams) -> float:
        """Largest initial ``||z||`` this distribution can produce (reference at rest)."""
        w = self.att_halfwidth
        x = dyn.hover_state()
        x[6:9] = (w, w, w)
        # tilt is monotone in |phi|, |theta|, so the corner maximises ||a||
        acc = float(np.linalg.norm(dyn.acceleration(x, p)))
        return math.sqrt(3 * self.pos_halfwidth**2 + acc**2 + w**2)


@dataclass(frozen=True)
class ObsScales:
    position: float = 5.0
    velocity: float = 10.0
    angle: float = 1.0
    rate: float = 5.0
    thrust_rate: float = 50.0

    def vector(self, p: dyn.VehicleParams) -> np.ndarray:
        return np.array(
            [self.position] * 3 + [self.velocity] * 3 + [self.angle] * 3 + [self.rate] * 3
            + [p.mass * p.gravity, self.thrust_rate]
        )


@dataclass(frozen=True)
class EnvConfig:
    dt: float = dyn.DEFAULT_DT
    episode_len: float = 10.0
    dwell_steps: int = 10
    gamma: float = 0.99
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    weights: RewardWeights = field(default_factory=RewardWeights)
    limits: SafetyLimits = field(default_factory=SafetyLimits)
    init: InitDistribution = field(default_factory=InitDistribution)
    obs_scales: ObsScales = field(default_factory=ObsScales)
    vehicle: dyn.VehicleParams = field(default_factory=dyn.VehicleParams)
    cond_bound: float = DEFAULT_COND_BOUND

    def __post_init__(self):
        if self.dwell_steps < 1:
            raise ValueError("dwell_steps must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        ratio = self.episode_len / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ValueError("episode_len must be an integer multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.episode_len / self.dt))

    @property
    def n_decisions(self) -> int:
        return -(-self.n_steps // self.dwell_steps)


def default_z_norm_delta(table: GainTable, config: EnvConfig) -> float:
    return reachable_radius(table, config.init.z_radius(config.vehicle))


def observe(x: np.ndarray, t: float, spec: ReferenceSpec, scales: np.ndarray | None = None) -> np.ndarray:
    obs = np.empty(OBS_DIM)
    obs[:dyn.STATE_DIM] = x if scales is None else x / scales
    obs[dyn.STATE_DIM] = min(t / spec.T_f, 1.0)
    return obs


def stage_reward(x: np.ndarray, u, ref: ReferenceSample, a_k: int, a_prev: int,
                 w: RewardWeights) -> float:
    e_r = x[dyn.POS] - ref.pos
    e_v = x[dyn.VEL] - ref.vel
    eta = x[dyn.ETA]
    omega = dyn.euler_rate_to_body_rate(eta, x[dyn.ETA_DOT])
    u = np.asarray(u, dtype=float)
    cost = (w.w_r * (e_r @ e_r) + w.w_v * (e_v @ e_v) + w.w_eta * (eta @ eta)
            + w.w_omega * (omega @ omega) + w.w_u * (u @ u))
    if a_prev != NO_ACTION and a_k != a_prev:
        cost += w.w_s
    return -float(cost)


def check_safety(x: np.ndarray, ref: ReferenceSample, limits: SafetyLimits,
                 p: dyn.VehicleParams, z_norm_delta: float | None = None,
                 z: np.ndarray | None = None) -> Violation | None:
    """First violated category in priority NonFinite > Attitude > Position > Velocity > ZNorm.

    ``z`` may carry the already computed error state of ``x``.
    """
    if not np.all(np.isfinite(x)):
        return Violation.NON_FINITE
    if abs(x[6]) > limits.max_roll_pitch or abs(x[7]) > limits.max_roll_pitch:
        return Violation.ATTITUDE
    e_r = x[dyn.POS] - ref.pos
    if e_r @ e_r > limits.max_pos_err_norm**2:
        return Violation.POSITION
    v = x[dyn.VEL]
    if v @ v > limits.max_vel_norm**2:
        return Violation.VELOCITY
    delta = limits.z_norm_delta if z_norm_delta is None else z_norm_delta
    if delta is not None:
        if z is None:
            z = error_state(x, ref, p)
        if z @ z > delta * delta:
            return Violation.Z_NORM
    return None


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    done: bool
    violation: Violation | None
    info: dict


LOG_COLUMNS = ("t",) + dyn.STATE_NAMES + dyn.INPUT_NAMES + ("action", "reward", "violation")


class GainSchedulingEnv:
    """Single-owner mutable episode state over a shared, immutable gain table."""

    def __init__(self, table: GainTable, config: EnvConfig | None = None, record: bool = False):
        self.table = table
        self.config = config or EnvConfig()
        self.record = record
        delta = self.config.limits.z_norm_delta
        self.z_norm_delta = default_z_norm_delta(table, self.config) if delta is None else delta
        self._scales = self.config.obs_scales.vector(self.config.vehicle)
        self.x = dyn.hover_state()
        self.t = 0.0
        self.step_index = 0
        self.a_prev = NO_ACTION
        self.done = True
        self.log: list[tuple] = []
        self._z = None      # error state of self.x, carried over from the safety check

    @property
    def n_actions(self) -> int:
        return len(self.table)

    def observation(self) -> np.ndarray:
        return observe(self.x, self.t, self.config.reference, self._scales)

    def reset(self, seed=None, state: np.ndarray | None = None) -> np.ndarray:
        """Start an episode from a seeded draw of the init distribution, or from ``state``."""
        if state is None:
            rng = np.random.default_rng(seed)
            self.x = self.config.init.sample(self.config.reference, rng)
        else:
            self.x = np.array(state, dtype=float)
        self.t = 0.0
        self.step_index = 0
        self.a_prev = NO_ACTION
        self.done = False
        self.log = []
        self._z = None
        return self.observation()

    def _inner_step(self, K: np.ndarray, action: int, charge_switch: bool):
        cfg = self.config
        p = cfg.vehicle
        ref = reference_at(cfg.reference, self.t)
        u = np.zeros(4)
        violation = None
        try:
            z = self._z if self._z is not None else error_state(self.x, ref, p)
            u = invert(-(K @ z), self.x, p, cfg.cond_bound)
            x_next = dyn.step_rk4(self.x, u, cfg.dt, p)
        except AttitudeSingular:
            x_next, violation = self.x, Violation.ATTITUDE
        except (NonFiniteState, ThrustSingular, IllConditioned, np.linalg.LinAlgError):
            x_next, violation = self.x, Violation.NON_FINITE
        a_prev = self.a_prev if charge_switch else action
        r = stage_reward(self.x, u, ref, action, a_prev, cfg.weights)
        t_next = (self.step_index + 1) * cfg.dt
        self._z = None
        if violation is None:
            ref_next = reference_at(cfg.reference, t_next)
            try:
                z_next = error_state(x_next, ref_next, p)
            except AttitudeSingular:
                z_next = None
            try:
                violation = check_safety(x_next, ref_next, cfg.limits, p, self.z_norm_delta, z_next)
            except AttitudeSingular:
                violation = Violation.ATTITUDE
            if violation is None:
                self._z = z_next
        if violation is not None:
            r += cfg.weights.terminal_penalty
        if self.record:
            self.log.append((self.t, *self.x, *u, action, r, violation.value if violation else ""))
        self.x = x_next
        self.t = t_next
        self.step_index += 1
        return u, r, violation

    def step(self, action: int) -> StepOutcome:
        if self.done:
            raise EpisodeFinished("step() called on a finished episode; call reset()")
        action = int(action)
        if not 0 <= action < len(self.table):
            raise IndexError(f"action {action} outside table of size {len(self.table)}")
        K = self.table.K(action)
        switched = self.a_prev != NO_ACTION and action != self.a_prev
        total, violation, us = 0.0, None, []
        for i in range(self.config.dwell_steps):
            u, r, violation = self._inner_step(K, action, charge_switch=(i == 0))
            total += r
            us.append(u)
            if violation is not None or self.step_index >= self.config.n_steps:
                break
        self.a_prev = action
        self.done = violation is not None or self.step_index >= self.config.n_steps
        info = {"switched": switched, "action": action, "inputs": np.array(us), "n_inner": len(us)}
        return StepOutcome(self.observation(), total, self.done, violation, info)
