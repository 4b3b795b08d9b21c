"""Experiment configuration: nested dataclasses loaded strictly from JSON."""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .certify import (DEFAULT_AXIS_POLES, DEFAULT_EPSILON, DEFAULT_RHO_MARGIN, DEFAULT_YAW_POLES,
                      axis_levels_from_poles, yaw_levels_from_poles)
from .dqn import TrainConfig
from .dynamics import DEFAULT_DT, VehicleParams
from .errors import ConfigError
from .evaluation import DEFAULT_EPSILONS, DEFAULT_ROLLOUTS
from .flatness import DEFAULT_COND_BOUND
from .mdp import EnvConfig, InitDistribution, ObsScales, RewardWeights, SafetyLimits
from .reference import ReferenceSpec


@dataclass(frozen=True)
class GainLevels:
    axis_levels: tuple[tuple[float, float, float, float], ...] = tuple(axis_levels_from_poles(DEFAULT_AXIS_POLES))
    yaw_levels: tuple[tuple[float, float], ...] = tuple(yaw_levels_from_poles(DEFAULT_YAW_POLES))
    epsilon: float = DEFAULT_EPSILON
    rho_margin: float = DEFAULT_RHO_MARGIN


@dataclass(frozen=True)
class EnvSection:
    dt: float = DEFAULT_DT
    episode_len: float = 10.0
    dwell_steps: int = 10
    cond_bound: float = DEFAULT_COND_BOUND


@dataclass(frozen=True)
class EvalProtocol:
    rollouts: int = DEFAULT_ROLLOUTS
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    policies: tuple[str, ...] = ()          # empty: greedy, each epsilon, random_safe
    base_seed: int | None = None            # None: drawn from the root seed's "eval" stream


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    gains: GainLevels = field(default_factory=GainLevels)
    env: EnvSection = field(default_factory=EnvSection)
    reward: RewardWeights = field(default_factory=RewardWeights)
    limits: SafetyLimits = field(default_factory=SafetyLimits)
    init: InitDistribution = field(default_factory=InitDistribution)
    obs_scales: ObsScales = field(default_factory=ObsScales)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalProtocol = field(default_factory=EvalProtocol)

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            dt=self.env.dt,
            episode_len=self.env.episode_len,
            dwell_steps=self.env.dwell_steps,
            gamma=self.train.gamma,
            reference=self.reference,
            weights=self.reward,
            limits=self.limits,
            init=self.init,
            obs_scales=self.obs_scales,
            vehicle=self.vehicle,
            cond_bound=self.env.cond_bound,
        )

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)


def _convert(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        return _build(tp, value, path)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_convert(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    return value


def _build(cls, data: dict, path: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f" in {path}" if path else ""
        raise ConfigError(f"unknown config key(s){where}: {', '.join(unknown)}")
    kwargs = {k: _convert(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data)
    try:    # cross-field checks live in the derived configs
        cfg.env_config()
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(f"config: {exc}") from exc
    return cfg


def config_to_dict(cfg) -> dict[str, Any]:
    def plain(v):
        if dataclasses.is_dataclass(v):
            return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        return v
    return plain(cfg)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(data)


def dumps_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2) + "\n"
