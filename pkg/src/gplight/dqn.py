"""Per-intersection DQN: capacity-aware pressure reward, Q-network, replay, target sync."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .optim import make_optimizer

N_PHASES = 4


class PressureError(ValueError):
    pass


def pressure(n_in: float, n_out: float, n_max: float) -> float:
    """Movement pressure discounted by how full the outgoing lane is."""
    if n_max < 1:
        raise PressureError(f"N_max must be >= 1, got {n_max}")
    if n_out > n_max:
        raise PressureError(f"N_out {n_out} exceeds capacity {n_max}")
    if n_out < 0 or n_in < 0:
        raise PressureError("vehicle counts must be nonnegative")
    return n_in * (1.0 - n_out / n_max)


def reward(readings) -> float:
    """Negated pressure sum over the 12 movements of one intersection."""
    readings = list(readings)
    if len(readings) != 12:
        raise PressureError(f"expected 12 movement readings, got {len(readings)}")
    return -sum(pressure(*r) for r in readings)


def queue_length_reward(readings) -> float:
    """The N_max -> infinity limit of `reward`."""
    return -sum(r[0] for r in readings)


@dataclass
class Experience:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray


@dataclass
class EpsilonSchedule:
    start: float = 0.8
    end: float = 0.2
    horizon: int = 100

    def __call__(self, episode: int) -> float:
        if self.horizon <= 0 or episode >= self.horizon:
            return self.end
        frac = max(episode, 0) / self.horizon
        return self.start + (self.end - self.start) * frac


class ReplayBuffer:
    def __init__(self, capacity: int = 10_000):
        self.capacity = capacity
        self.items: deque[Experience] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.items)

    def add(self, exp: Experience) -> None:
        self.items.append(exp)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Experience]:
        idx = rng.choice(len(self.items), size=min(batch_size, len(self.items)), replace=False)
        return [self.items[i] for i in idx]


def _relu(x):
    return np.maximum(x, 0.0)


class QNetwork:
    """MLP state -> 4 Q-values, with a twin target copy of the parameters."""

    def __init__(self, state_dim: int, hidden: tuple[int, ...] = (64, 64), rng: np.random.Generator | None = None, state_scale: float = 0.1):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim = state_dim
        self.hidden = tuple(hidden)
        self.state_scale = state_scale
        sizes = (state_dim, *hidden, N_PHASES)
        self.params: dict[str, np.ndarray] = {}
        for k, (a, b) in enumerate(zip(sizes, sizes[1:])):
            # He init for the rectifier layers
            self.params[f"W{k}"] = rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b))
            self.params[f"b{k}"] = np.zeros(b)
        self.n_layers = len(sizes) - 1
        self.target_params = {k: v.copy() for k, v in self.params.items()}

    def _forward(self, params, states):
        h = np.atleast_2d(states).astype(float)
        # phase one-hot stays as is; vehicle counts are scaled
        h = np.concatenate([h[:, :N_PHASES], h[:, N_PHASES:] * self.state_scale], axis=1)
        cache = [h]
        for k in range(self.n_layers):
            z = h @ params[f"W{k}"] + params[f"b{k}"]
            h = _relu(z) if k < self.n_layers - 1 else z
            cache.append(z)
        return h, cache

    def q(self, states: np.ndarray) -> np.ndarray:
        return self._forward(self.params, states)[0]

    def q_target(self, states: np.ndarray) -> np.ndarray:
        return self._forward(self.target_params, states)[0]

    def backward(self, cache, dout: np.ndarray) -> dict[str, np.ndarray]:
        grads = {}
        g = dout
        for k in reversed(range(self.n_layers)):
            h_in = cache[0] if k == 0 else _relu(cache[k])
            grads[f"W{k}"] = h_in.T @ g
            grads[f"b{k}"] = g.sum(axis=0)
            if k > 0:
                g = (g @ self.params[f"W{k}"].T) * (cache[k] > 0)
        return grads

    def sync_target(self) -> None:
        self.target_params = {k: v.copy() for k, v in self.params.items()}

    def flat_params(self) -> dict[str, np.ndarray]:
        return dict(self.params)


def select_action(q_values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform random phase with probability epsilon, else the lowest-index argmax."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon out of range: {epsilon}")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(N_PHASES))
    return int(np.argmax(q_values))


def td_loss_and_grads(net: QNetwork, batch: list[Experience], gamma: float):
    if not batch:
        raise ValueError("empty batch")
    s = np.stack([e.state for e in batch])
    a = np.array([e.action for e in batch])
    r = np.array([e.reward for e in batch], dtype=float)
    s2 = np.stack([e.next_state for e in batch])
    target = r + gamma * net.q_target(s2).max(axis=1)
    q, cache = net._forward(net.params, s)
    rows = np.arange(len(batch))
    err = q[rows, a] - target
    loss = float(np.mean(err**2))
    dout = np.zeros_like(q)
    dout[rows, a] = 2.0 * err / len(batch)
    return loss, net.backward(cache, dout)


def td_update(net: QNetwork, batch: list[Experience], gamma: float, lr: float = 1e-3, optimizer=None) -> float:
    """One gradient step on the online parameters; the target copy is untouched."""
    loss, grads = td_loss_and_grads(net, batch, gamma)
    opt = optimizer if optimizer is not None else make_optimizer("sgd", lr)
    opt.step(net.params, grads)
    return loss


@dataclass
class AgentConfig:
    hidden: tuple[int, ...] = (64, 64)
    gamma: float = 0.8
    lr: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 32
    buffer_capacity: int = 10_000
    target_sync_steps: int = 200
    reward_scale: float = 0.01
    state_scale: float = 0.1
    updates_per_step: int = 1


@dataclass
class DQNAgent:
    state_dim: int
    config: AgentConfig = field(default_factory=AgentConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        self.rng = np.random.default_rng(self.seed)
        self.net = QNetwork(self.state_dim, self.config.hidden, self.rng, self.config.state_scale)
        self.buffer = ReplayBuffer(self.config.buffer_capacity)
        self.optimizer = make_optimizer(self.config.optimizer, self.config.lr)
        self.steps = 0
        self.losses: list[float] = []

    def act(self, state: np.ndarray, epsilon: float) -> int:
        return select_action(self.net.q(state)[0], epsilon, self.rng)

    def observe(self, state, action, reward_value, next_state, learn: bool = True) -> float | None:
        self.buffer.add(Experience(state, action, reward_value * self.config.reward_scale, next_state))
        if not learn:
            return None
        loss = None
        if len(self.buffer) >= self.config.batch_size:
            for _ in range(self.config.updates_per_step):
                batch = self.buffer.sample(self.config.batch_size, self.rng)
                loss = td_update(self.net, batch, self.config.gamma, optimizer=self.optimizer)
                self.losses.append(loss)
        self.steps += 1
        if self.steps % self.config.target_sync_steps == 0:
            self.net.sync_target()
        return loss
