"""Glue between the simulator's minute statistics and the STGCN model."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from .netgraph import RoadGraph, normalized_laplacian
from .stgcn import StgcnConfig, StgcnModel, make_windows


@dataclass
class Forecaster:
    """Predicts per-lane occupancy N x 12 x H from the last `history` minute maxima.

    In aggregate mode the model sees one feature per node (the lane sum) and the
    forecast is spread evenly back over the 12 lanes.
    """

    model: StgcnModel
    aggregate: bool = False

    @property
    def history(self) -> int:
        return self.model.config.history

    @property
    def horizon(self) -> int:
        return self.model.config.horizon

    def features(self, minutes: np.ndarray) -> np.ndarray:
        minutes = np.asarray(minutes, dtype=float)
        return minutes.sum(axis=-1, keepdims=True) if self.aggregate else minutes

    def predict(self, minutes: list[np.ndarray] | np.ndarray) -> np.ndarray:
        window = self.features(np.asarray(minutes[-self.history :], dtype=float))
        y = self.model.forward(window.transpose(1, 2, 0))
        if self.aggregate:
            y = np.repeat(y / 12.0, 12, axis=1)
        return y


def new_model(graph: RoadGraph, aggregate: bool = False, seed: int = 0, **overrides) -> StgcnModel:
    lap = normalized_laplacian(graph)
    cfg = StgcnConfig(n_nodes=graph.n, n_features=1 if aggregate else 12, **overrides)
    return StgcnModel(cfg, lap.L_scaled, seed=seed)


def windows_from_runs(runs: list[np.ndarray], history: int, horizon: int, aggregate: bool = False):
    xs, ys = [], []
    for minutes in runs:
        m = np.asarray(minutes, dtype=float)
        if aggregate:
            m = m.sum(axis=-1, keepdims=True)
        x, y = make_windows(m, history, horizon)
        xs.append(x)
        ys.append(y)
    return np.concatenate(xs), np.concatenate(ys)


def save_model(path: Path, model: StgcnModel, graph_hash: str, aggregate: bool = False) -> None:
    meta = {"kind": "stgcn", "config": model.config.to_dict(), "graph_hash": graph_hash, "aggregate": aggregate}
    checkpoint.save(path, meta, model.params)


def load_model(path: Path, graph: RoadGraph) -> Forecaster:
    meta, arrays = checkpoint.load(path)
    if meta.get("kind") != "stgcn":
        raise checkpoint.CheckpointError(f"{path} is not an STGCN checkpoint")
    if meta["graph_hash"] != graph.graph_hash():
        raise checkpoint.CheckpointError(
            f"graph hash mismatch: checkpoint {meta['graph_hash']} vs network {graph.graph_hash()}"
        )
    cfg = StgcnConfig.from_dict(meta["config"])
    model = StgcnModel(cfg, normalized_laplacian(graph).L_scaled, params=arrays)
    expected = model.init_params(np.random.default_rng(0))
    for name, arr in expected.items():
        if name not in arrays or arrays[name].shape != arr.shape:
            raise checkpoint.CheckpointError(f"parameter {name} missing or misshapen")
    return Forecaster(model, aggregate=bool(meta.get("aggregate", False)))


def save_dataset(path: Path, X: np.ndarray, Y: np.ndarray) -> None:
    checkpoint.save(path, {"kind": "dataset", "x_shape": list(X.shape), "y_shape": list(Y.shape)}, {"X": X, "Y": Y})


def load_dataset(path: Path) -> tuple[np.ndarray, np.ndarray]:
    meta, arrays = checkpoint.load(path)
    if meta.get("kind") != "dataset":
        raise checkpoint.CheckpointError(f"{path} is not a dataset file")
    return arrays["X"], arrays["Y"]
