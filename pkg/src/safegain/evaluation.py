"""Evaluation protocol: seeded rollouts of several policies over one gain table, and CSV reports."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import dynamics as dyn
from .dqn import QNetwork, select_action, stream
from .errors import TableMismatch
from .flatness import Z_NAMES, error_state
from .mdp import LOG_COLUMNS, GainSchedulingEnv, Violation
from .reference import reference_at

DEFAULT_ROLLOUTS = 40
DEFAULT_EPSILONS = (0.10, 0.30)


@dataclass(frozen=True)
class PolicyKind:
    kind: str                 # "greedy" | "eps_greedy" | "random_safe"
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in ("greedy", "eps_greedy", "random_safe"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "eps_greedy" and not 0.0 < self.epsilon < 1.0:
            raise ValueError("eps_greedy needs epsilon in (0, 1)")

    @classmethod
    def greedy(cls) -> "PolicyKind":
        return cls("greedy")

    @classmethod
    def eps_greedy(cls, epsilon: float) -> "PolicyKind":
        return cls("eps_greedy", float(epsilon))

    @classmethod
    def random_safe(cls) -> "PolicyKind":
        return cls("random_safe")

    @property
    def name(self) -> str:
        if self.kind == "eps_greedy":
            return f"eps_greedy_{self.epsilon:.2f}"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "PolicyKind":
        """``greedy``, ``random_safe`` or ``eps_greedy_<eps>`` / ``eps<eps>``."""
        text = text.strip().lower().replace("-", "_")
        if text == "greedy":
            return cls.greedy()
        if text in ("random_safe", "random"):
            return cls.random_safe()
        for prefix in ("eps_greedy_", "eps_greedy", "eps_", "eps"):
            if text.startswith(prefix):
                return cls.eps_greedy(float(text[len(prefix):]))
        raise ValueError(f"cannot parse policy {text!r}")


def default_policies(epsilons: Sequence[float] = DEFAULT_EPSILONS) -> list[PolicyKind]:
    return [PolicyKind.greedy(), *(PolicyKind.eps_greedy(e) for e in epsilons), PolicyKind.random_safe()]


@dataclass
class Trajectory:
    """Per-inner-step record of one episode plus derived plotting quantities."""

    t: np.ndarray
    state: np.ndarray
    u: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    violation: list[str]
    r_d: np.ndarray
    z: np.ndarray
    gains: np.ndarray
    torque: np.ndarray

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class EpisodeStats:
    seed: int
    cumulative_reward: float
    switches: int
    decisions: int
    peak_abs_phi: float
    peak_abs_theta: float
    final_pos_err: float
    violation: str | None = None


def _trajectory(env: GainSchedulingEnv) -> Trajectory:
    log = env.log
    n = len(log)
    t = np.array([row[0] for row in log])
    state = np.array([row[1:15] for row in log]).reshape(n, dyn.STATE_DIM)
    u = np.array([row[15:19] for row in log]).reshape(n, 4)
    action = np.array([row[19] for row in log], dtype=int)
    reward = np.array([row[20] for row in log])
    violation = [row[21] for row in log]
    cfg = env.config
    r_d = np.zeros((n, 3))
    z = np.full((n, 14), np.nan)
    for i in range(n):
        ref = reference_at(cfg.reference, t[i])
        r_d[i] = ref.pos
        try:
            z[i] = error_state(state[i], ref, cfg.vehicle)
        except Exception:   # singular attitude rows stay NaN
            pass
    gains = env.table.gains()[action] if n else np.zeros((0, 14))
    torque = u[:, 1:4] * np.asarray(cfg.vehicle.inertia_diag)
    return Trajectory(t, state, u, action, reward, violation, r_d, z, gains, torque)


def rollout(policy: PolicyKind, net: QNetwork | None, env: GainSchedulingEnv, seed: int,
            table_hash: str | None = None) -> tuple[EpisodeStats, Trajectory]:
    """Run one full episode; unsafe outcomes are reported in ``stats.violation``."""
    if table_hash is not None and table_hash != env.table.hash():
        raise TableMismatch("checkpoint was trained on a different gain table")
    if policy.kind != "random_safe":
        if net is None:
            raise ValueError(f"policy {policy.name} needs a Q-network")
        if net.sizes[-1] != env.n_actions:
            raise TableMismatch(f"network has {net.sizes[-1]} outputs, table has {env.n_actions} actions")
    rng = stream(seed, "policy")
    env.record = True
    obs = env.reset(seed)
    total, actions, violation = 0.0, [], None
    while not env.done:
        if policy.kind == "random_safe":
            a = int(rng.integers(env.n_actions))
        else:
            eps = policy.epsilon if policy.kind == "eps_greedy" else 0.0
            a = select_action(net.forward(obs), eps, rng)
        out = env.step(a)
        obs = out.observation
        total += out.reward
        actions.append(a)
        if out.violation is not None:
            violation = out.violation.value
    traj = _trajectory(env)
    switches = sum(1 for i in range(1, len(actions)) if actions[i] != actions[i - 1])
    final_ref = reference_at(env.config.reference, env.t)
    stats = EpisodeStats(
        seed=seed,
        cumulative_reward=total,
        switches=switches,
        decisions=len(actions),
        peak_abs_phi=float(np.max(np.abs(traj.state[:, 6]))),
        peak_abs_theta=float(np.max(np.abs(traj.state[:, 7]))),
        final_pos_err=float(np.linalg.norm(env.x[0:3] - final_ref.pos)),
        violation=violation,
    )
    return stats, traj


@dataclass
class PolicyReport:
    policy: str
    episodes: list[EpisodeStats]
    trajectory: Trajectory | None = None    # representative rollout (first seed)

    @property
    def n(self) -> int:
        return len(self.episodes)

    def _vals(self, attr: str) -> np.ndarray:
        return np.array([getattr(e, attr) for e in self.episodes], dtype=float)

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self._vals("cumulative_reward")))

    @property
    def std_reward(self) -> float:
        return float(np.std(self._vals("cumulative_reward"), ddof=1)) if self.n > 1 else 0.0

    @property
    def mean_switches(self) -> float:
        return float(np.mean(self._vals("switches")))

    @property
    def mean_peak_theta(self) -> float:
        return float(np.mean(self._vals("peak_abs_theta")))

    @property
    def worst_peak_theta(self) -> float:
        return float(np.max(self._vals("peak_abs_theta")))

    @property
    def mean_final_pos_err(self) -> float:
        return float(np.mean(self._vals("final_pos_err")))

    @property
    def unsafe_count(self) -> int:
        return sum(1 for e in self.episodes if e.violation)

    @property
    def completed_count(self) -> int:
        return self.n - self.unsafe_count

    def violation_counts(self) -> dict[str, int]:
        counts = {v.value: 0 for v in Violation}
        for e in self.episodes:
            if e.violation:
                counts[e.violation] += 1
        return counts


def evaluate(policy: PolicyKind, net: QNetwork | None, env_factory: Callable[[], GainSchedulingEnv],
             n: int = DEFAULT_ROLLOUTS, base_seed: int = 0, threads: int = 1,
             table_hash: str | None = None) -> PolicyReport:
    """``n`` rollouts with seeds ``base_seed .. base_seed + n - 1``, ordered by seed."""
    if n < 1:
        raise ValueError("need at least one rollout")

    def one(seed):
        return rollout(policy, net, env_factory(), seed, table_hash)

    seeds = range(base_seed, base_seed + n)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    return PolicyReport(policy.name, [r[0] for r in results], results[0][1])


# ------------------------------------------------------------------- reporting

SUMMARY_COLUMNS = (
    "policy", "rollouts", "completed", "unsafe",
    "mean_peak_abs_theta_rad", "worst_abs_theta_rad",
    "mean_cumulative_reward", "std_cumulative_reward", "mean_switches", "mean_final_pos_err_m",
    *(f"violations_{v.value}" for v in Violation),
)
EPISODE_COLUMNS = (
    "seed", "cumulative_reward", "switches", "decisions",
    "peak_abs_phi_rad", "peak_abs_theta_rad", "final_pos_err_m", "violation",
)
LONG_COLUMNS = ("policy", "t", "series", "value")


def _writer(path: Path):
    try:
        fh = open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return fh, csv.writer(fh, lineterminator="\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    fh, w = _writer(Path(path))
    with fh:
        w.writerow(LOG_COLUMNS)
        for i in range(len(traj)):
            w.writerow([_fmt(traj.t[i]), *map(_fmt, traj.state[i]), *map(_fmt, traj.u[i]),
                        int(traj.action[i]), _fmt(traj.reward[i]), traj.violation[i]])


def _figure_series(traj: Trajectory) -> dict[str, list[tuple[str, np.ndarray]]]:
    """Plot-ready series grouped by output file."""
    axes = "xyz"
    return {
        "gain_schedule": [(f"k_{lvl}_{a}", traj.gains[:, off + i])
                          for off, lvl in ((0, "p"), (3, "v"), (6, "a"), (9, "j"))
                          for i, a in enumerate(axes)]
                         + [("k_psi", traj.gains[:, 12]), ("k_psi_dot", traj.gains[:, 13]),
                            ("action", traj.action.astype(float))],
        "error_states": [(name, traj.z[:, i]) for i, name in enumerate(Z_NAMES)],
        "position": [(a, traj.state[:, i]) for i, a in enumerate(axes)]
                    + [(f"{a}_d", traj.r_d[:, i]) for i, a in enumerate(axes)],
        "euler_angles": [(name, traj.state[:, 6 + i]) for i, name in enumerate(("phi", "theta", "psi"))],
        "controls": [("u_T", traj.u[:, 0])]
                    + [(f"tau_{a}", traj.torque[:, i]) for i, a in enumerate(axes)],
        "step_reward": [("reward", traj.reward)],
    }


def write_figure_data(policy: str, traj: Trajectory, out_dir: Path, writers: dict | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for group, series in _figure_series(traj).items():
        path = out_dir / f"{group}.csv"
        new = writers is None or group not in writers
        fh, w = _writer(path) if new else writers[group]
        if new:
            w.writerow(LONG_COLUMNS)
            if writers is not None:
                writers[group] = (fh, w)
        for name, vals in series:
            for ti, v in zip(traj.t, vals):
                w.writerow([policy, _fmt(ti), name, _fmt(v)])
        if writers is None:
            fh.close()
        paths.append(path)
    return paths


def emit_report(reports: Sequence[PolicyReport], out_dir: str | Path) -> list[Path]:
    """Write summary, per-episode and plot-ready long-format CSVs; returns the written paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out_dir}: {exc}") from exc
    written = []

    path = out_dir / "summary.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(SUMMARY_COLUMNS)
        for rep in reports:
            counts = rep.violation_counts()
            w.writerow([rep.policy, rep.n, rep.completed_count, rep.unsafe_count,
                        _fmt(rep.mean_peak_theta), _fmt(rep.worst_peak_theta),
                        _fmt(rep.mean_reward), _fmt(rep.std_reward), _fmt(rep.mean_switches),
                        _fmt(rep.mean_final_pos_err), *(counts[v.value] for v in Violation)])
    written.append(path)

    for rep in reports:
        path = out_dir / f"episodes_{rep.policy}.csv"
        fh, w = _writer(path)
        with fh:
            w.writerow(EPISODE_COLUMNS)
            for e in rep.episodes:
                w.writerow([e.seed, _fmt(e.cumulative_reward), e.switches, e.decisions,
                            _fmt(e.peak_abs_phi), _fmt(e.peak_abs_theta), _fmt(e.final_pos_err),
                            e.violation or ""])
        written.append(path)

    path = out_dir / "reward_distribution.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(("policy", "seed", "cumulative_reward", "switches"))
        for rep in reports:
            for e in rep.episodes:
                w.writerow([rep.policy, e.seed, _fmt(e.cumulative_reward), e.switches])
    written.append(path)

    writers: dict = {}
    try:
        for rep in reports:
            if rep.trajectory is not None:
                written += write_figure_data(rep.policy, rep.trajectory, out_dir, writers)
    finally:
        for fh, _ in writers.values():
            fh.close()
    return sorted(set(written), key=str)


def read_episode_csv(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def smoothed(values: Sequence[float], window: int = 25) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what is available."""
    v = np.asarray(values, dtype=float)
    c = np.cumsum(np.insert(v, 0, 0.0))
    out = np.empty_like(v)
    for i in range(len(v)):
        lo = max(0, i + 1 - window)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


def quartile_means(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    q = max(1, len(v) // 4)
    return float(np.mean(v[:q])), float(np.mean(v[-q:]))


def is_nan(x: float) -> bool:
    return isinstance(x, float) and math.isnan(x)
