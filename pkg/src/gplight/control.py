"""Episode loop: forecast-limited green durations, DQN phase choice, and baselines.

Modes:
  fixedtime           phases 0,1,2,3 in turn with a fixed green
  maxpressure         phase with the largest summed movement pressure, fixed green
  presslight-fixed    DQN on the classic pressure reward, fixed green
  presslight-dynamic  DQN on the classic pressure reward, green = t_req
  gplight             DQN on the capacity-aware reward, green = min(t_exp, t_req)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dqn import AgentConfig, DQNAgent, EpsilonSchedule, reward
from .forecast import Forecaster
from .microsim import OBS_SIZE, YELLOW_S, MetricsRecord, Simulator
from .netgraph import APPROACHES, RoadGraph

MODES = ("gplight", "presslight-fixed", "presslight-dynamic", "maxpressure", "fixedtime")
LEARNING_MODES = ("gplight", "presslight-fixed", "presslight-dynamic")

# root seed -> per-component streams: SeedSequence(root, spawn_key=(component, *ids))
SEED_COMPONENTS = {"agents": 1, "policy": 2, "harvest": 3, "predictor": 4, "sim": 5}


def component_seed(root: int, component: str, *ids: int) -> int:
    ss = np.random.SeedSequence(root, spawn_key=(SEED_COMPONENTS[component], *ids))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class DurationRule:
    discharge_headway_s: float = 2.0
    t_min_s: int = 10
    t_max_s: int = 60
    yellow_s: int = YELLOW_S
    fixed_green_s: int = 30

    def __post_init__(self) -> None:
        if not 0 < self.t_min_s <= self.t_max_s:
            raise ValueError(f"need 0 < t_min <= t_max, got {self.t_min_s}, {self.t_max_s}")
        if self.discharge_headway_s <= 0 or self.yellow_s <= 0 or self.fixed_green_s <= 0:
            raise ValueError("durations must be positive")

    def clamp(self, seconds: float) -> int:
        return int(min(max(math.ceil(seconds - 1e-9), self.t_min_s), self.t_max_s))


@dataclass
class EpisodeConfig:
    total_s: int = 3600
    history: int = 10
    horizon: int = 5
    gamma: float = 0.8
    lr: float = 1e-3
    seed: int = 0
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    rule: DurationRule = field(default_factory=DurationRule)
    neighbor_obs: bool = False
    presslight_out_scale: float = 1.0 / 3.0
    spawn_jitter_s: int = 0
    # "mean": average the per-second reward over the action; "end": one reading when it finishes
    reward_timing: str = "mean"

    def __post_init__(self) -> None:
        if self.reward_timing not in ("mean", "end"):
            raise ValueError(f"reward_timing must be 'mean' or 'end', got {self.reward_timing!r}")
        if self.total_s < (self.history + self.horizon) * 60:
            raise ValueError(f"episode of {self.total_s} s shorter than history+horizon")


def required_green(obs: np.ndarray, movements: tuple[int, int], rule: DurationRule) -> int:
    """Green needed to clear the vehicles now queued on the phase's two lanes."""
    n = float(sum(obs[4 + d] for d in movements))
    return rule.clamp(n * rule.discharge_headway_s / len(movements))


def expected_green(prediction: np.ndarray, movements: tuple[int, int], rule: DurationRule) -> int:
    """Green implied by the forecast: horizon max of the phase's summed lane occupancy.

    `prediction` is D x H for one intersection.
    """
    prediction = np.asarray(prediction)
    if prediction.ndim != 2 or prediction.shape[0] <= max(movements):
        raise ValueError(f"prediction shape {prediction.shape} does not cover movements {movements}")
    n_hat = float(prediction[list(movements)].sum(axis=0).max())
    return rule.clamp(n_hat * rule.discharge_headway_s / len(movements))


def presslight_variant(readings, out_scale: float = 1.0 / 3.0) -> float:
    """Classic pressure reward without the capacity factor.

    N_out is the exit road occupancy; `out_scale` = 1/3 compares against the
    average lane of that road. With out_scale = 0 this equals the N_max -> inf
    limit of the capacity-aware reward.
    """
    return -sum(n_in - n_out * out_scale for n_in, n_out, _ in readings)


def phase_pressures(readings, phase_movements, out_scale: float = 1.0 / 3.0) -> np.ndarray:
    return np.array([sum(readings[d][0] - readings[d][1] * out_scale for d in ph) for ph in phase_movements])


def state_vector(sim: Simulator, node: int, neighbor_obs: bool = False) -> np.ndarray:
    obs = sim.observe(node)
    if not neighbor_obs:
        return obs
    extra = np.zeros(12 * len(APPROACHES))
    for s, side in enumerate(APPROACHES):
        nb = sim.graph.neighbors[node].get(side)
        if nb is not None:
            extra[12 * s : 12 * s + 12] = sim.incoming_queues(nb)
    return np.concatenate([obs, extra])


def state_dim(neighbor_obs: bool) -> int:
    return OBS_SIZE + (48 if neighbor_obs else 0)


@dataclass
class EpisodeResult:
    mode: str
    metrics: MetricsRecord
    actions: list[dict]
    t_sum: list[int]
    real_minutes: np.ndarray  # M x N x 12
    predicted_minutes: dict[int, np.ndarray]  # minute -> N x 12 one-step forecast
    losses: list[float]
    event_log: str = ""

    def green_series(self, node: int, total_s: int) -> np.ndarray:
        """Cumulative green seconds per phase, shape total_s x 4."""
        per_sec = np.zeros((total_s, 4))
        for a in self.actions:
            if a["node"] != node:
                continue
            start = a["t"] + a["yellow"]
            end = min(start + a["green"], total_s)
            if start < total_s:
                per_sec[start:end, a["phase"]] = 1.0
        return per_sec.cumsum(axis=0)


def make_agents(graph: RoadGraph, cfg: EpisodeConfig, agent_cfg: AgentConfig | None = None, seed: int = 0) -> list[DQNAgent]:
    agent_cfg = agent_cfg or AgentConfig(gamma=cfg.gamma, lr=cfg.lr)
    dim = state_dim(cfg.neighbor_obs)
    return [DQNAgent(dim, agent_cfg, seed=component_seed(seed, "agents", i)) for i in range(graph.n)]


def run_episode(
    cfg: EpisodeConfig,
    graph: RoadGraph,
    flows,
    mode: str,
    agents: list[DQNAgent] | None = None,
    predictor: Forecaster | None = None,
    epsilon: float = 0.0,
    learn: bool = False,
    sim_seed: int = 0,
    record_events: bool = False,
) -> EpisodeResult:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode in LEARNING_MODES and (agents is None or len(agents) != graph.n):
        raise ValueError(f"mode {mode} needs one agent per intersection")
    if agents is not None:
        dim = state_dim(cfg.neighbor_obs)
        if any(a.state_dim != dim for a in agents):
            raise ValueError(f"agent state size does not match {dim}")
    if predictor is not None and predictor.model.config.n_nodes != graph.n:
        raise ValueError("predictor was built for a different network")

    rule = cfg.rule
    sim = Simulator(graph, flows, seed=sim_seed, spawn_jitter_s=cfg.spawn_jitter_s, record_events=record_events)
    n = graph.n
    t_sum = [0] * n
    pending: list[tuple[np.ndarray, int] | None] = [None] * n
    last_phase = [-1] * n
    actions: list[dict] = []
    predicted: dict[int, np.ndarray] = {}
    prediction = None
    use_prediction = mode == "gplight" and predictor is not None
    minutes_seen = 0
    losses: list[float] = []

    learning = agents is not None and mode in LEARNING_MODES
    acc = [[0.0, 0] for _ in range(n)]

    def instant_reward(i: int, obs: np.ndarray | None = None) -> float:
        readings = sim.movement_readings(i, obs)
        return reward(readings) if mode == "gplight" else presslight_variant(readings, cfg.presslight_out_scale)

    def settle(i: int, obs_state: np.ndarray) -> None:
        prev = pending[i]
        if prev is None or not learning:
            return
        total, count = acc[i]
        if cfg.reward_timing == "mean" and count:
            r = total / count
        else:
            r = instant_reward(i, obs_state[:OBS_SIZE])
        acc[i] = [0.0, 0]
        loss = agents[i].observe(prev[0], prev[1], r, obs_state, learn=learn)
        if loss is not None:
            losses.append(loss)

    while True:
        if len(sim.minute_history) > minutes_seen:
            minutes_seen = len(sim.minute_history)
            if use_prediction and minutes_seen >= cfg.history:
                prediction = predictor.predict(sim.minute_history)
                predicted[minutes_seen] = prediction[:, :, 0].copy()

        for i, sig in enumerate(sim.signals):
            if not sig.awaiting or t_sum[i] >= cfg.total_s:
                continue
            s = state_vector(sim, i, cfg.neighbor_obs)
            settle(i, s)
            obs = s[:OBS_SIZE]
            phases = sim.net.phase_movements[i]
            readings = None

            if mode == "fixedtime":
                phase = (last_phase[i] + 1) % 4
            elif mode == "maxpressure":
                readings = sim.movement_readings(i, obs)
                phase = int(np.argmax(phase_pressures(readings, phases, cfg.presslight_out_scale)))
            else:
                phase = agents[i].act(s, epsilon)

            t_req = required_green(obs, phases[phase], rule)
            t_exp = None
            if mode in ("fixedtime", "maxpressure", "presslight-fixed"):
                green = rule.fixed_green_s
            elif mode == "presslight-dynamic":
                green = t_req
            else:
                t_exp = expected_green(prediction[i], phases[phase], rule) if prediction is not None else rule.t_max_s
                green = min(t_exp, t_req)

            yellow = sig.set_action(phase, green)
            actions.append(
                {
                    "t": sim.clock, "node": i, "phase": phase, "green": green, "yellow": yellow,
                    "t_req": t_req, "t_exp": t_exp, "predicted": prediction is not None,
                }
            )
            t_sum[i] += yellow + green
            last_phase[i] = phase
            pending[i] = (s, phase)

        if all(t >= cfg.total_s for t in t_sum) and all(sig.awaiting for sig in sim.signals):
            break
        sim.step()
        if learning and cfg.reward_timing == "mean":
            for i in range(n):
                acc[i][0] += instant_reward(i)
                acc[i][1] += 1

    for i in range(n):
        settle(i, state_vector(sim, i, cfg.neighbor_obs))

    return EpisodeResult(
        mode=mode,
        metrics=sim.metrics(at=cfg.total_s),
        actions=actions,
        t_sum=t_sum,
        real_minutes=np.array(sim.minute_history),
        predicted_minutes=predicted,
        losses=losses,
        event_log=sim.event_log_text() if record_events else "",
    )


def train_control(
    cfg: EpisodeConfig,
    graph: RoadGraph,
    flows,
    mode: str,
    episodes: int,
    predictor: Forecaster | None = None,
    agent_cfg: AgentConfig | None = None,
    pretrain_episodes: int = 0,
    progress=None,
) -> tuple[list[DQNAgent], list[EpisodeResult]]:
    """Train one agent per intersection for `episodes` episodes.

    During the first `pretrain_episodes` the forecast is withheld (t_exp non-binding).
    """
    if mode not in LEARNING_MODES:
        raise ValueError(f"mode {mode} does not learn")
    agents = make_agents(graph, cfg, agent_cfg, cfg.seed)
    history = []
    for ep in range(episodes):
        res = run_episode(
            cfg, graph, flows, mode, agents,
            predictor=predictor if ep >= pretrain_episodes else None,
            epsilon=cfg.epsilon(ep), learn=True,
            sim_seed=component_seed(cfg.seed, "sim", ep),
        )
        history.append(res)
        if progress is not None:
            progress(ep, res)
    return agents, history


def evaluate(
    cfg: EpisodeConfig,
    graph: RoadGraph,
    flows,
    mode: str,
    agents: list[DQNAgent] | None = None,
    predictor: Forecaster | None = None,
    record_events: bool = False,
) -> EpisodeResult:
    """Greedy, non-learning episode."""
    return run_episode(
        cfg, graph, flows, mode, agents, predictor, epsilon=0.0, learn=False,
        sim_seed=component_seed(cfg.seed, "sim", 10**6), record_events=record_events,
    )


def harvest_minutes(cfg: EpisodeConfig, graph: RoadGraph, flows, runs: int, jitter_s: int = 3) -> list[np.ndarray]:
    """Per-minute lane maxima from MaxPressure episodes with spawn jitter."""
    out = []
    for r in range(runs):
        c = EpisodeConfig(**{**cfg.__dict__, "spawn_jitter_s": jitter_s})
        res = run_episode(c, graph, flows, "maxpressure", sim_seed=component_seed(cfg.seed, "harvest", r))
        out.append(res.real_minutes)
    return out
