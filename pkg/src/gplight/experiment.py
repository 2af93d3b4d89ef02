"""Config-driven experiment pipeline: scenario, predictor, control training, evaluation.

Every stage reads what earlier stages wrote into the output directory, so the
CLI verbs can run one stage at a time or all of them in order.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, checkpoint
from .control import (
    LEARNING_MODES,
    MODES,
    DurationRule,
    EpisodeConfig,
    EpisodeResult,
    component_seed,
    evaluate,
    harvest_minutes,
    make_agents,
    state_dim,
    train_control,
)
from .dqn import AgentConfig, DQNAgent, EpsilonSchedule
from .forecast import Forecaster, load_model, new_model, save_dataset, save_model, windows_from_runs
from .microsim import FlowError, dump_flows, load_flows
from .netgraph import RoadGraph, RoadnetError, build_graph
from .scenarios import SCENARIOS, generate_scenario
from .stgcn import train

log = logging.getLogger(__name__)

SUMMARY_FIELDS = ("episode", "mode", "seed", "throughput", "att_completed", "att_inclusive")
TRAINING_FIELDS = SUMMARY_FIELDS + ("epsilon", "mean_loss")
ACTION_FIELDS = ("t", "node", "phase", "green", "yellow", "t_req", "t_exp", "predicted")


class StageError(RuntimeError):
    """Failure inside one pipeline stage; `stage` names it for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class ConfigError(StageError):
    def __init__(self, message: str):
        super().__init__("config", message)


# -- configuration --------------------------------------------------------------

@dataclass
class PredictorSettings:
    harvest_runs: int = 8
    jitter_s: int = 3
    epochs: int = 60
    lr: float = 1e-3
    batch_size: int = 16
    optimizer: str = "adam"
    cheb_k: int = 3
    kt: int = 3
    blocks: list = field(default_factory=lambda: [[32, 16, 32], [32, 16, 32]])
    aggregate: bool = False


@dataclass
class ExperimentConfig:
    scenario: str | None = "single"
    roadnet: str | None = None
    flows: str | None = None
    surge: bool = True
    scenario_seed: int = 0
    modes: list = field(default_factory=lambda: list(MODES))
    episodes: int = 100
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    pretrain_episodes: int = 0
    episode: dict = field(default_factory=dict)
    epsilon: dict = field(default_factory=dict)
    rule: dict = field(default_factory=dict)
    agent: dict = field(default_factory=dict)
    predictor: dict = field(default_factory=dict)
    green_nodes: list = field(default_factory=lambda: [0])
    log_training_actions: bool = False

    # typed views, built by `validate`
    def episode_config(self, seed: int) -> EpisodeConfig:
        eps = EpsilonSchedule(**{"horizon": max(1, int(0.8 * self.episodes)), **self.epsilon})
        return EpisodeConfig(**self.episode, seed=seed, epsilon=eps, rule=DurationRule(**self.rule))

    def agent_config(self) -> AgentConfig:
        ep = EpisodeConfig(**self.episode)
        kw = {"gamma": ep.gamma, "lr": ep.lr, **self.agent}
        if "hidden" in kw:
            kw["hidden"] = tuple(kw["hidden"])
        return AgentConfig(**kw)

    def predictor_settings(self) -> PredictorSettings:
        return PredictorSettings(**self.predictor)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _typed(cls, kwargs: dict, what: str):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{what}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from None


def parse_config(source: dict | str | Path | None, base_dir: Path | None = None) -> ExperimentConfig:
    """Build and fully validate a config; nothing runs unless every field checks out."""
    if source is None:
        raw: dict = {}
    elif isinstance(source, dict):
        raw = dict(source)
    else:
        path = Path(source)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        base_dir = base_dir or path.parent
    _check(isinstance(raw, dict), "config must be a JSON object")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = sorted(set(raw) - known)
    _check(not unknown, f"unknown config keys {unknown}")
    for key in ("roadnet", "flows"):
        if raw.get(key) and base_dir is not None and not Path(raw[key]).is_absolute():
            raw[key] = str((base_dir / raw[key]).resolve())
    cfg = ExperimentConfig(**raw)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if cfg.roadnet or cfg.flows:
        _check(bool(cfg.roadnet and cfg.flows), "roadnet and flows must be given together")
        for key in ("roadnet", "flows"):
            _check(Path(getattr(cfg, key)).is_file(), f"{key} file {getattr(cfg, key)} does not exist")
    else:
        _check(cfg.scenario in SCENARIOS, f"scenario must be one of {SCENARIOS}, got {cfg.scenario!r}")
    _check(isinstance(cfg.modes, list) and len(cfg.modes) > 0, "modes must be a nonempty list")
    bad = [m for m in cfg.modes if m not in MODES]
    _check(not bad, f"unknown modes {bad}; expected a subset of {list(MODES)}")
    _check(len(set(cfg.modes)) == len(cfg.modes), "duplicate modes")
    _check(isinstance(cfg.episodes, int) and 1 <= cfg.episodes <= 10_000, "episodes must be an integer in [1, 10000]")
    _check(0 <= cfg.pretrain_episodes <= cfg.episodes, "pretrain_episodes must be in [0, episodes]")
    _check(isinstance(cfg.seeds, list) and len(cfg.seeds) > 0, "seeds must be a nonempty list")
    _check(all(isinstance(s, int) and s >= 0 for s in cfg.seeds), "seeds must be nonnegative integers")
    _check(len(set(cfg.seeds)) == len(cfg.seeds), "duplicate seeds")
    for key in ("episode", "epsilon", "rule", "agent", "predictor"):
        _check(isinstance(getattr(cfg, key), dict), f"{key} must be an object")
    _check("seed" not in cfg.episode and "epsilon" not in cfg.episode and "rule" not in cfg.episode,
           "episode.seed/epsilon/rule are set through the top-level seeds, epsilon and rule keys")

    _typed(DurationRule, cfg.rule, "rule")
    _typed(EpsilonSchedule, cfg.epsilon, "epsilon")
    ep = _typed(lambda **kw: cfg.episode_config(0), {}, "episode")
    _check(0.0 <= ep.gamma < 1.0, "episode.gamma must be in [0, 1)")
    _check(0.0 < ep.lr <= 1.0, "episode.lr must be in (0, 1]")
    _check(ep.presslight_out_scale >= 0.0, "episode.presslight_out_scale must be >= 0")
    _check(ep.spawn_jitter_s >= 0, "episode.spawn_jitter_s must be >= 0")
    eps = ep.epsilon
    _check(0.0 <= eps.end <= eps.start <= 1.0, "epsilon needs 0 <= end <= start <= 1")
    _check(ep.rule.t_max_s <= 600, "rule.t_max_s above 600 s is out of range")

    ag = _typed(lambda **kw: cfg.agent_config(), {}, "agent")
    _check(all(isinstance(h, int) and h > 0 for h in ag.hidden), "agent.hidden must be positive integers")
    _check(1 <= ag.batch_size <= ag.buffer_capacity, "agent needs 1 <= batch_size <= buffer_capacity")
    _check(ag.target_sync_steps >= 1, "agent.target_sync_steps must be >= 1")
    _check(ag.reward_scale > 0 and ag.state_scale > 0, "agent scales must be positive")
    _check(ag.optimizer in ("sgd", "adam"), "agent.optimizer must be sgd or adam")
    _check(1 <= ag.updates_per_step <= 64, "agent.updates_per_step must be in [1, 64]")

    pr = _typed(PredictorSettings, cfg.predictor, "predictor")
    _check(pr.harvest_runs >= 1 and pr.epochs >= 0 and pr.batch_size >= 1, "predictor sizes must be positive")
    _check(0.0 <= pr.lr <= 1.0, "predictor.lr must be in [0, 1]")
    _check(pr.optimizer in ("sgd", "adam"), "predictor.optimizer must be sgd or adam")
    _check(1 <= pr.cheb_k <= 10 and 1 <= pr.kt <= ep.history, "predictor.cheb_k/kt out of range")
    _check(len(pr.blocks) >= 1 and all(len(b) == 3 and min(b) > 0 for b in pr.blocks),
           "predictor.blocks must be [c1, c_spatial, c2] triples")
    _check(ep.history - 2 * len(pr.blocks) * (pr.kt - 1) >= 1, "history too short for the predictor blocks")
    _check(all(isinstance(n, int) and n >= 0 for n in cfg.green_nodes), "green_nodes must be node indices")
    _check(isinstance(cfg.log_training_actions, bool), "log_training_actions must be true or false")


# -- small I/O helpers -------------------------------------------------------------

def csv_text(fields, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    w.writerows(rows)
    return buf.getvalue()


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- stage: network ------------------------------------------------------------------

def stage_generate(cfg: ExperimentConfig, out: Path) -> tuple[RoadGraph, list]:
    """Write roadnet.json and flows.json into `out` and return the parsed network."""
    try:
        if cfg.roadnet:
            roadnet = json.loads(Path(cfg.roadnet).read_text())
            flow_src = Path(cfg.flows).read_text()
        else:
            roadnet, flows = generate_scenario(cfg.scenario, seed=cfg.scenario_seed, surge=cfg.surge)
            flow_src = dump_flows(flows)
        graph = build_graph(roadnet)
        lane_ids = {lane.id for node in graph.nodes for lane in node.lanes}
        flows = load_flows(flow_src)
        for f in flows:
            if f.route[0] not in lane_ids:
                raise FlowError(f"flow starts on unknown lane {f.route[0]}")
    except (RoadnetError, FlowError, ValueError, OSError) as exc:
        raise StageError("generate", str(exc)) from exc
    checkpoint.write_atomic(out / "roadnet.json", json.dumps(roadnet, indent=1, sort_keys=True))
    checkpoint.write_atomic(out / "flows.json", dump_flows(flows))
    bad = [n for n in cfg.green_nodes if n >= graph.n]
    if bad:
        raise StageError("generate", f"green_nodes {bad} outside a network of {graph.n} nodes")
    return graph, flows


def load_network(out: Path, stage: str) -> tuple[RoadGraph, list]:
    try:
        graph = build_graph(out / "roadnet.json")
        flows = load_flows(out / "flows.json")
    except (RoadnetError, FlowError, OSError) as exc:
        raise StageError(stage, f"cannot load network from {out}: {exc}; run `generate` first") from exc
    return graph, flows


# -- stage: predictor ----------------------------------------------------------------

def _predictor_cell(args) -> dict:
    cfg, out, seed = args
    graph, flows = load_network(out, "train-predictor")
    ps = cfg.predictor_settings()
    ep = cfg.episode_config(component_seed(seed, "harvest"))
    runs = harvest_minutes(ep, graph, flows, ps.harvest_runs, jitter_s=ps.jitter_s)
    X, Y = windows_from_runs(runs, ep.history, ep.horizon, aggregate=ps.aggregate)
    scale = float(max(X.max(), 1.0))
    model = new_model(
        graph, aggregate=ps.aggregate, seed=component_seed(seed, "predictor"),
        history=ep.history, horizon=ep.horizon, cheb_k=ps.cheb_k, kt=ps.kt,
        blocks=tuple(tuple(b) for b in ps.blocks), scale=scale,
    )
    curve = train(model, X, Y, ps.epochs, lr=ps.lr, batch_size=ps.batch_size,
                  seed=component_seed(seed, "predictor", 1), optimizer=ps.optimizer)
    d = out / "predictor"
    save_model(d / f"seed{seed}.ckpt", model, graph.graph_hash(), aggregate=ps.aggregate)
    save_dataset(d / f"dataset_seed{seed}.bin", X, Y)
    checkpoint.write_atomic(d / f"loss_seed{seed}.csv", csv_text(("epoch", "mse"), enumerate(curve)))
    return {"seed": seed, "windows": len(X), "initial_mse": curve[0], "final_mse": curve[-1]}


def stage_predictor(cfg: ExperimentConfig, out: Path, workers: int = 1) -> list[dict]:
    load_network(out, "train-predictor")
    cells = [(cfg, out, s) for s in cfg.seeds]
    try:
        return _map(_predictor_cell, cells, workers)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("train-predictor", f"{type(exc).__name__}: {exc}") from exc


def load_predictor(out: Path, seed: int, graph: RoadGraph, stage: str) -> Forecaster:
    path = out / "predictor" / f"seed{seed}.ckpt"
    if not path.is_file():
        raise StageError(stage, f"missing predictor {path}; run `train-predictor` first")
    try:
        return load_model(path, graph)
    except checkpoint.CheckpointError as exc:
        raise StageError(stage, str(exc)) from exc


# -- stage: control training -------------------------------------------------------

def state_layout(neighbor_obs: bool) -> str:
    parts = ["phase_onehot:4", "incoming_queue:12", "outgoing_occupancy:12"]
    if neighbor_obs:
        parts.append("neighbor_queue:4x12")
    return hashlib.sha256(",".join(parts).encode()).hexdigest()[:16]


def _agent_dir(out: Path, mode: str, seed: int) -> Path:
    return out / "agents" / mode / f"seed{seed}"


def save_agents(out: Path, mode: str, seed: int, graph: RoadGraph, agents: list[DQNAgent], neighbor_obs: bool) -> None:
    d = _agent_dir(out, mode, seed)
    for node, agent in zip(graph.nodes, agents):
        meta = {
            "kind": "dqn", "node": node.id, "state_layout": state_layout(neighbor_obs),
            "state_dim": agent.state_dim, "hidden": list(agent.config.hidden), "graph_hash": graph.graph_hash(),
        }
        checkpoint.save(d / f"{node.id}.ckpt", meta, agent.net.params)


def load_agents(out: Path, mode: str, seed: int, graph: RoadGraph, cfg: ExperimentConfig, stage: str) -> list[DQNAgent]:
    ep = cfg.episode_config(seed)
    layout = state_layout(ep.neighbor_obs)
    agents = make_agents(graph, ep, cfg.agent_config(), seed)
    for node, agent in zip(graph.nodes, agents):
        path = _agent_dir(out, mode, seed) / f"{node.id}.ckpt"
        if not path.is_file():
            raise StageError(stage, f"missing agent checkpoint {path}; run `train-control` first")
        meta, arrays = checkpoint.load(path)
        if meta.get("kind") != "dqn" or meta.get("node") != node.id or meta.get("state_layout") != layout:
            raise StageError(stage, f"{path} was written for a different node or state layout")
        if meta.get("graph_hash") != graph.graph_hash():
            raise StageError(stage, f"{path} was written for a different network")
        for k, v in agent.net.params.items():
            if k not in arrays or arrays[k].shape != v.shape:
                raise StageError(stage, f"{path}: parameter {k} missing or misshapen")
        agent.net.params = {k: arrays[k].copy() for k in agent.net.params}
        agent.net.sync_target()
    return agents


def _control_cell(args) -> list[list]:
    cfg, out, mode, seed = args
    graph, flows = load_network(out, "train-control")
    ep = cfg.episode_config(seed)
    predictor = load_predictor(out, seed, graph, "train-control") if mode == "gplight" else None
    agents, history = train_control(
        ep, graph, flows, mode, cfg.episodes, predictor=predictor,
        agent_cfg=cfg.agent_config(), pretrain_episodes=cfg.pretrain_episodes,
    )
    save_agents(out, mode, seed, graph, agents, ep.neighbor_obs)
    cell_dir = out / "cells" / f"{mode}_seed{seed}"
    if cfg.log_training_actions:
        acts = [[i, *[a[k] if a[k] is not None else "" for k in ACTION_FIELDS]] for i, res in enumerate(history) for a in res.actions]
        checkpoint.write_atomic(cell_dir / "training_actions.csv", csv_text(("episode", *ACTION_FIELDS), acts))
    rows = []
    for i, res in enumerate(history):
        m = res.metrics.summary()
        loss = float(np.mean(res.losses)) if res.losses else ""
        rows.append([i, mode, seed, m["throughput"], m["att_completed"], m["att_inclusive"], round(ep.epsilon(i), 6), loss])
    checkpoint.write_atomic(cell_dir / "training.csv", csv_text(TRAINING_FIELDS, rows))
    return rows


def stage_control(cfg: ExperimentConfig, out: Path, workers: int = 1) -> list[list]:
    load_network(out, "train-control")
    cells = [(cfg, out, m, s) for m in cfg.modes if m in LEARNING_MODES for s in cfg.seeds]
    try:
        results = _map(_control_cell, cells, workers)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("train-control", f"{type(exc).__name__}: {exc}") from exc
    rows = [r for cell in results for r in cell]
    checkpoint.write_atomic(out / "training.csv", csv_text(TRAINING_FIELDS, rows))
    return rows


# -- stage: evaluation -----------------------------------------------------------

def _write_series(cell_dir: Path, res: EpisodeResult, total_s: int, green_nodes: list[int]) -> None:
    cum = res.metrics.cumulative_passed
    checkpoint.write_atomic(cell_dir / "cumulative.csv", csv_text(("t", "passed"), enumerate(cum)))
    green_rows = []
    for node in green_nodes:
        g = res.green_series(node, total_s)
        green_rows += [[t, node, *map(int, g[t])] for t in range(0, total_s, 10)]
        green_rows.append([total_s, node, *map(int, g[-1])])
    checkpoint.write_atomic(cell_dir / "green.csv", csv_text(("t", "node", "phase0", "phase1", "phase2", "phase3"), green_rows))
    # real: lane maxima of minute m summed; predicted: the forecast of minute m made from minutes before it
    real = res.real_minutes.sum(axis=(1, 2)) if len(res.real_minutes) else np.zeros(0)
    vol_rows = []
    for m, value in enumerate(real):
        pred = res.predicted_minutes.get(m)
        vol_rows.append([m, (m + 1) * 60, float(value), "" if pred is None else round(float(pred.sum()), 6)])
    checkpoint.write_atomic(cell_dir / "volume.csv", csv_text(("minute", "t_end", "real", "predicted"), vol_rows))
    acts = [[a[k] if a[k] is not None else "" for k in ACTION_FIELDS] for a in res.actions]
    checkpoint.write_atomic(cell_dir / "actions.csv", csv_text(ACTION_FIELDS, acts))


def _eval_cell(args) -> list:
    cfg, out, mode, seed = args
    graph, flows = load_network(out, "evaluate")
    ep = cfg.episode_config(seed)
    agents = load_agents(out, mode, seed, graph, cfg, "evaluate") if mode in LEARNING_MODES else None
    predictor = load_predictor(out, seed, graph, "evaluate") if mode == "gplight" else None
    res = evaluate(ep, graph, flows, mode, agents, predictor)
    _write_series(out / "cells" / f"{mode}_seed{seed}", res, ep.total_s, cfg.green_nodes)
    m = res.metrics.summary()
    trained = cfg.episodes if mode in LEARNING_MODES else 0
    return [trained, mode, seed, m["throughput"], m["att_completed"], m["att_inclusive"]]


def stage_evaluate(cfg: ExperimentConfig, out: Path, workers: int = 1) -> list[list]:
    load_network(out, "evaluate")
    cells = [(cfg, out, m, s) for m in cfg.modes for s in cfg.seeds]
    try:
        rows = _map(_eval_cell, cells, workers)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("evaluate", f"{type(exc).__name__}: {exc}") from exc
    checkpoint.write_atomic(out / "summary.csv", csv_text(SUMMARY_FIELDS, rows))
    checkpoint.write_atomic(out / "table.csv", table_text(rows))
    return rows


def table_text(rows) -> str:
    """Median ATT and throughput per mode over seeds, in the order modes first appear."""
    order: list[str] = []
    by_mode: dict[str, list] = {}
    for r in rows:
        mode = r[1]
        if mode not in by_mode:
            order.append(mode)
            by_mode[mode] = []
        by_mode[mode].append(r)
    out = []
    for mode in order:
        rs = by_mode[mode]
        out.append([
            mode, len(rs),
            round(float(np.median([float(r[4]) for r in rs])), 3),
            round(float(np.median([float(r[5]) for r in rs])), 3),
            float(np.median([int(r[3]) for r in rs])),
        ])
    return csv_text(("mode", "seeds", "att_completed", "att_inclusive", "throughput"), out)


# -- whole pipeline --------------------------------------------------------------------

def write_manifest(cfg: ExperimentConfig, out: Path, graph: RoadGraph) -> dict:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json" and "figures" not in p.parts)
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "graph_hash": graph.graph_hash(),
        "seeds": list(cfg.seeds),
        "seed_scheme": "numpy SeedSequence(root, spawn_key=(component, *ids)); components "
        "agents=1 policy=2 harvest=3 predictor=4 sim=5",
        "total_s": cfg.episode_config(0).total_s,
        "versions": {"gplight": __version__, "python": platform.python_version(), "numpy": np.__version__},
        "files": {str(p.relative_to(out)): _sha(p) for p in files},
    }
    checkpoint.write_atomic(out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def run(cfg: ExperimentConfig, out: Path, workers: int = 1, figures: bool = True) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.write_atomic(out / "config.json", json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    graph, _ = stage_generate(cfg, out)
    if "gplight" in cfg.modes:
        stage_predictor(cfg, out, workers)
    if any(m in LEARNING_MODES for m in cfg.modes):
        stage_control(cfg, out, workers)
    stage_evaluate(cfg, out, workers)
    manifest = write_manifest(cfg, out, graph)
    if figures:
        from .report import render_run

        try:
            render_run(out)
        except Exception as exc:
            raise StageError("report", f"{type(exc).__name__}: {exc}") from exc
    return manifest


def _map(fn, cells, workers: int):
    if workers <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))


# -- comparison -------------------------------------------------------------------------

def load_cumulative(run_dir: Path, mode: str) -> dict[int, np.ndarray]:
    """seed -> cumulative passed-vehicle series for one mode of a run."""
    out = {}
    for cell in sorted((Path(run_dir) / "cells").glob(f"{mode}_seed*")):
        path = cell / "cumulative.csv"
        if path.is_file():
            seed = int(cell.name.rsplit("seed", 1)[1])
            out[seed] = np.array([int(r["passed"]) for r in read_csv(path)])
    return out


def _manifest(run_dir: Path) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.is_file():
        raise StageError("compare", f"{run_dir} has no manifest.json; is it a finished run?")
    return json.loads(path.read_text())


def compare(run_a: Path, run_b: Path, mode_a: str, mode_b: str | None = None) -> tuple[np.ndarray, np.ndarray, str]:
    """Median over shared seeds of N_a(t) - N_b(t), plus a per-mode median summary of both runs.

    Returns (gap median, per-seed gaps stacked, table csv text).
    """
    mode_b = mode_b or mode_a
    ma, mb = _manifest(run_a), _manifest(run_b)
    if ma["graph_hash"] != mb["graph_hash"] or ma["config"]["flows"] != mb["config"]["flows"] \
            or ma["config"]["scenario"] != mb["config"]["scenario"] or ma["config"]["surge"] != mb["config"]["surge"]:
        raise StageError("compare", "runs use different scenarios")
    if ma["total_s"] != mb["total_s"]:
        raise StageError("compare", f"runs have different horizons ({ma['total_s']} vs {mb['total_s']} s)")
    a, b = load_cumulative(run_a, mode_a), load_cumulative(run_b, mode_b)
    seeds = sorted(set(a) & set(b))
    if not seeds:
        raise StageError("compare", f"no seeds shared between {mode_a} in {run_a} and {mode_b} in {run_b}")
    gaps = np.stack([a[s] - b[s] for s in seeds])
    rows = []
    for tag, run_dir in (("a", run_a), ("b", run_b)):
        for r in read_csv(Path(run_dir) / "summary.csv"):
            rows.append([r["episode"], f"{tag}:{r['mode']}", r["seed"], r["throughput"], r["att_completed"], r["att_inclusive"]])
    return np.median(gaps, axis=0), gaps, table_text(rows)
