"""Figures rendered from a run directory's CSV files (Agg backend, PNG output)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiment import load_cumulative, read_csv  # noqa: E402

PHASE_LABELS = ("WE straight", "NS straight", "WE left", "NS left")


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.stem + ".tmp.png")
    fig.savefig(tmp, dpi=120, bbox_inches="tight")
    plt.close(fig)
    tmp.replace(path)
    return path


def plot_gap(gap: np.ndarray, path: Path, label: str = "gap", per_seed: np.ndarray | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    t = np.arange(len(gap))
    if per_seed is not None:
        for g in per_seed:
            ax.plot(t, g, color="0.8", lw=0.7)
    ax.plot(t, gap, color="C3", lw=1.5, label=f"{label} (median)")
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("cumulative vehicles")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_volume(rows: list[dict], path: Path) -> Path:
    t = np.array([int(r["t_end"]) for r in rows])
    real = np.array([float(r["real"]) for r in rows])
    pred = np.array([float(r["predicted"]) if r["predicted"] != "" else np.nan for r in rows])
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.plot(t, real, "o-", ms=3, label="real")
    ax.plot(t, pred, "s--", ms=3, label="predicted")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("vehicles (per-minute lane max, summed)")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_green(rows: list[dict], path: Path, node: int = 0) -> Path:
    rows = [r for r in rows if int(r["node"]) == node]
    t = np.array([int(r["t"]) for r in rows])
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    for p, label in enumerate(PHASE_LABELS):
        ax.plot(t, [int(r[f"phase{p}"]) for r in rows], label=label)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("accumulated green (s)")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_summary(rows: list[dict], path: Path) -> Path:
    modes = list(dict.fromkeys(r["mode"] for r in rows))
    med = [np.median([int(r["throughput"]) for r in rows if r["mode"] == m]) for m in modes]
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.bar(range(len(modes)), med, color="C0")
    for i, m in enumerate(modes):
        pts = [int(r["throughput"]) for r in rows if r["mode"] == m]
        ax.plot([i] * len(pts), pts, "k.", ms=4)
    ax.set_xticks(range(len(modes)), modes, rotation=20)
    ax.set_ylabel("throughput (vehicles)")
    return _save(fig, path)


def plot_training(rows: list[dict], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    for mode in dict.fromkeys(r["mode"] for r in rows):
        by_seed: dict[str, list[int]] = {}
        for r in rows:
            if r["mode"] == mode:
                by_seed.setdefault(r["seed"], []).append(int(r["throughput"]))
        curves = np.array(list(by_seed.values()))
        ax.plot(np.median(curves, axis=0), label=mode)
    ax.set_xlabel("episode")
    ax.set_ylabel("throughput (median over seeds)")
    ax.legend(frameon=False)
    return _save(fig, path)


def render_run(run_dir: Path) -> list[Path]:
    run_dir = Path(run_dir)
    figs = run_dir / "figures"
    made = []
    summary = read_csv(run_dir / "summary.csv")
    made.append(plot_summary(summary, figs / "summary.png"))
    if (run_dir / "training.csv").is_file():
        training = read_csv(run_dir / "training.csv")
        if training:
            made.append(plot_training(training, figs / "training.png"))
    modes = {r["mode"] for r in summary}
    if {"gplight", "presslight-dynamic"} <= modes:
        a, b = load_cumulative(run_dir, "gplight"), load_cumulative(run_dir, "presslight-dynamic")
        seeds = sorted(set(a) & set(b))
        gaps = np.stack([a[s] - b[s] for s in seeds])
        made.append(plot_gap(np.median(gaps, axis=0), figs / "gap_gplight_vs_presslight-dynamic.png",
                             "gplight - presslight-dynamic", gaps))
    for cell in sorted((run_dir / "cells").iterdir()):
        mode = cell.name.rsplit("_seed", 1)[0]
        if mode == "gplight" and (cell / "volume.csv").is_file():
            made.append(plot_volume(read_csv(cell / "volume.csv"), figs / f"volume_{cell.name}.png"))
        if (cell / "green.csv").is_file():
            rows = read_csv(cell / "green.csv")
            for node in sorted({int(r["node"]) for r in rows}):
                made.append(plot_green(rows, figs / f"green_{cell.name}_node{node}.png", node))
    return made
