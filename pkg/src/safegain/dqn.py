"""Numpy DQN: MLP Q-network with manual backprop, Adam, replay buffer and target network."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import SafeGainError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    gamma: float = 0.99
    target_sync: int = 1000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.5
    episodes: int = 300
    grad_clip: float = 10.0
    buffer_capacity: int = 100_000
    hidden: tuple[int, ...] = (128, 128)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not (0.0 <= self.eps_end <= self.eps_start <= 1.0):
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if self.batch_size < 1 or self.episodes < 0 or self.target_sync < 1:
            raise ValueError("batch_size and target_sync must be >= 1, episodes >= 0")


class QNetwork:
    """Fully connected ReLU network with a linear output layer."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if rng is None:
                W, b = np.zeros((fan_out, fan_in)), np.zeros(fan_out)
            else:
                bound = 1.0 / math.sqrt(fan_in)
                W = rng.uniform(-bound, bound, (fan_out, fan_in))
                b = rng.uniform(-bound, bound, fan_out)
            self.weights.append(W)
            self.biases.append(b)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "QNetwork":
        net = QNetwork.__new__(QNetwork)
        net.sizes = self.sizes
        net.weights = [W.copy() for W in self.weights]
        net.biases = [b.copy() for b in self.biases]
        return net

    def forward(self, obs: np.ndarray) -> np.ndarray:
        h = np.asarray(obs, dtype=float)
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W.T + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    def loss_and_grads(self, obs: np.ndarray, actions: np.ndarray, targets: np.ndarray):
        """Mean squared TD error on the taken actions and its parameter gradients."""
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        acts = [obs]
        pre = []
        h = obs
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ W.T + b
            pre.append(a)
            h = np.maximum(a, 0.0) if i < last else a
            acts.append(h)
        n = obs.shape[0]
        rows = np.arange(n)
        err = h[rows, actions] - targets
        loss = float(np.mean(err * err))

        delta = np.zeros_like(h)
        delta[rows, actions] = 2.0 * err / n
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))
        for i in range(last, -1, -1):
            grads[2 * i] = delta.T @ acts[i]
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * (pre[i - 1] > 0)
        return loss, grads


def q_forward(net: QNetwork, obs: np.ndarray) -> np.ndarray:
    return net.forward(obs)


class Adam:
    def __init__(self, params: list[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def update(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class ReplayBuffer:
    """Fixed-capacity FIFO ring of (obs, action, reward, next_obs, done)."""

    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, action: int, reward: float, next_obs, done: bool) -> None:
        i = self._next
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = done
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.choice(self.size, size=min(batch_size, self.size), replace=False)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.dones[idx]


def select_action(qvals: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties resolve to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(len(qvals)))
    return int(np.argmax(qvals))


def td_target(reward, done, gamma: float, q_next_target_vals: np.ndarray):
    """``r`` on terminal transitions, else ``r + gamma * max_a' Q_target(x', a')``."""
    q_next = np.asarray(q_next_target_vals, dtype=float)
    best = q_next.max(axis=-1)
    return np.where(done, reward, reward + gamma * best)


def train_step(net: QNetwork, target_net: QNetwork, batch, gamma: float, optimizer: Adam,
               grad_clip: float = 10.0) -> float:
    obs, actions, rewards, next_obs, dones = batch
    if len(actions) == 0:
        raise ValueError("empty batch")
    y = td_target(rewards, dones, gamma, target_net.forward(next_obs))
    loss, grads = net.loss_and_grads(obs, actions, y)
    clip_by_global_norm(grads, grad_clip)
    optimizer.update(net.params, grads)
    return loss


def sync_target(net: QNetwork, target_net: QNetwork) -> None:
    if net.sizes != target_net.sizes:
        raise ValueError(f"architecture mismatch: {net.sizes} vs {target_net.sizes}")
    for dst, src in zip(target_net.params, net.params):
        dst[...] = src


def epsilon_at(decision: int, total_decisions: int, cfg: TrainConfig) -> float:
    horizon = max(1, int(cfg.eps_fraction * total_decisions))
    frac = min(1.0, decision / horizon)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


def stream(seed: int, name: str) -> np.random.Generator:
    """Named, independent random stream derived from a root seed."""
    key = int.from_bytes(name.encode("utf-8"), "little") % (2**63)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


@dataclass
class EpisodeRecord:
    episode: int
    cumulative_reward: float
    epsilon: float
    loss_mean: float
    actions: list[int]


def train(env_factory: Callable[[], "GainSchedulingEnv"], config: TrainConfig,
          on_episode: Callable[[int, QNetwork], None] | None = None):
    """Train a Q-network over the env's certified table.

    Returns ``(net, curve)``; ``curve`` holds one :class:`EpisodeRecord` per episode.
    Every executed action is an index into the environment's table.
    """
    env = env_factory()
    n_actions = env.n_actions
    if n_actions < 1:
        raise SafeGainError("empty action table")
    obs_dim = env.observation().shape[0]
    net = QNetwork((obs_dim, *config.hidden, n_actions), stream(config.seed, "weights"))
    target = net.copy()
    opt = Adam(net.params, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    buf = ReplayBuffer(config.buffer_capacity, obs_dim)
    explore = stream(config.seed, "exploration")
    replay_rng = stream(config.seed, "replay")
    init_seeds = stream(config.seed, "init").integers(0, 2**63, size=max(config.episodes, 1))

    total_decisions = config.episodes * env.config.n_decisions
    decision = 0
    grad_steps = 0
    curve: list[EpisodeRecord] = []
    for ep in range(config.episodes):
        obs = env.reset(int(init_seeds[ep]))
        ep_reward, losses, actions = 0.0, [], []
        eps = epsilon_at(decision, total_decisions, config)
        while not env.done:
            eps = epsilon_at(decision, total_decisions, config)
            a = select_action(net.forward(obs), eps, explore)
            out = env.step(a)
            buf.add(obs, a, out.reward, out.observation, out.done)
            obs = out.observation
            ep_reward += out.reward
            actions.append(a)
            decision += 1
            if len(buf) >= config.batch_size:
                loss = train_step(net, target, buf.sample(config.batch_size, replay_rng),
                                  config.gamma, opt, config.grad_clip)
                if not math.isfinite(loss):
                    raise SafeGainError(f"non-finite loss at episode {ep}")
                losses.append(loss)
                grad_steps += 1
                if grad_steps % config.target_sync == 0:
                    sync_target(net, target)
        rec = EpisodeRecord(ep, ep_reward, eps, float(np.mean(losses)) if losses else float("nan"), actions)
        curve.append(rec)
        logger.debug("episode %d reward %.3f eps %.3f", ep, ep_reward, eps)
        if on_episode is not None:
            on_episode(ep, net)
    return net, curve


CHECKPOINT_VERSION = "safegain.checkpoint/1"


def checkpoint_dict(net: QNetwork, table_hash: str, config: dict | None = None) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "table_hash": table_hash,
        "sizes": list(net.sizes),
        "layers": [
            {"shape": list(W.shape), "weight": W.ravel().tolist(), "bias": b.tolist()}
            for W, b in zip(net.weights, net.biases)
        ],
        "config": config or {},
    }


def net_from_checkpoint(data: dict) -> QNetwork:
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
    net = QNetwork(data["sizes"])
    for i, layer in enumerate(data["layers"]):
        net.weights[i] = np.array(layer["weight"], dtype=float).reshape(layer["shape"])
        net.biases[i] = np.array(layer["bias"], dtype=float)
    return net


def train_config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
