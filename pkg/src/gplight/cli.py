"""Command line entry point.

    gplight generate single --out runs/net
    gplight run --config exp.json --out runs/a
    gplight compare runs/a runs/a --mode-a gplight --mode-b presslight-dynamic --out runs/cmp
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checkpoint, experiment as ex
from .scenarios import SCENARIOS

log = logging.getLogger("gplight")


def _config(args) -> ex.ExperimentConfig:
    cfg = ex.parse_config(args.config) if args.config else ex.parse_config(None)
    raw = cfg.to_dict()
    if getattr(args, "seed", None) is not None:
        raw["seeds"] = [args.seed]
    if getattr(args, "episodes", None) is not None:
        raw["episodes"] = args.episodes
    if getattr(args, "modes", None):
        raw["modes"] = [m.strip() for m in args.modes.split(",") if m.strip()]
    return ex.parse_config(raw)


def _prepare(args) -> tuple[ex.ExperimentConfig, Path]:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.write_atomic(out / "config.json", json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    ex.stage_generate(cfg, out)
    return cfg, out


def cmd_generate(args) -> None:
    if args.config:
        cfg = _config(args)
    else:
        cfg = ex.parse_config({"scenario": args.name, "surge": not args.no_surge, "scenario_seed": args.seed or 0})
    graph, flows = ex.stage_generate(cfg, Path(args.out))
    print(f"{cfg.scenario or cfg.roadnet}: {graph.n} intersections, {int(graph.edges.sum())} links, "
          f"{len(flows)} flows -> {args.out}")


def cmd_train_predictor(args) -> None:
    cfg, out = _prepare(args)
    for r in ex.stage_predictor(cfg, out, args.workers):
        print(f"seed {r['seed']}: {r['windows']} windows, mse {r['initial_mse']:.4f} -> {r['final_mse']:.4f}")


def cmd_train_control(args) -> None:
    cfg, out = _prepare(args)
    rows = ex.stage_control(cfg, out, args.workers)
    print(f"trained {len({(r[1], r[2]) for r in rows})} mode/seed cells; curves in {out / 'training.csv'}")


def cmd_evaluate(args) -> None:
    cfg, out = _prepare(args)
    ex.stage_evaluate(cfg, out, args.workers)
    print((out / "table.csv").read_text(), end="")


def cmd_run(args) -> None:
    cfg = _config(args)
    manifest = ex.run(cfg, Path(args.out), workers=args.workers, figures=not args.no_figures)
    print((Path(args.out) / "table.csv").read_text(), end="")
    print(f"config {manifest['config_hash'][:12]}, {len(manifest['files'])} files in {args.out}")


def cmd_compare(args) -> None:
    gap, per_seed, table = ex.compare(Path(args.run_a), Path(args.run_b), args.mode_a, args.mode_b)
    out = Path(args.out)
    checkpoint.write_atomic(out / "gap.csv", ex.csv_text(("t", "gap_median", *[f"seed_{i}" for i in range(len(per_seed))]),
                                                          [[t, float(gap[t]), *per_seed[:, t].tolist()] for t in range(len(gap))]))
    checkpoint.write_atomic(out / "table.csv", table)
    if not args.no_figures:
        from .report import plot_gap

        plot_gap(gap, out / "gap.png", f"{args.mode_a} - {args.mode_b or args.mode_a}", per_seed)
    print(table, end="")
    print(f"final gap {gap[-1]:+.1f} vehicles (median over {len(per_seed)} seeds)")


def cmd_report(args) -> None:
    from .report import render_run

    for p in render_run(Path(args.run_dir)):
        print(p)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gplight", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--seed", type=int, help="run a single root seed instead of the config's list")
        sp.add_argument("--out", required=out_required, help="output directory")

    def sweep(sp):
        common(sp)
        sp.add_argument("--episodes", type=int, help="override training episodes")
        sp.add_argument("--modes", help="comma separated mode list override")
        sp.add_argument("--workers", type=int, default=1, help="parallel mode/seed cells")

    g = sub.add_parser("generate", help="write roadnet.json and flows.json for a scenario")
    g.add_argument("name", nargs="?", default="single", choices=SCENARIOS)
    g.add_argument("--no-surge", action="store_true", help="grid scenarios: omit the surge window")
    common(g)
    g.set_defaults(fn=cmd_generate)

    for verb, fn, text in (
        ("train-predictor", cmd_train_predictor, "harvest minute series and fit the forecaster"),
        ("train-control", cmd_train_control, "train DQN agents for every learning mode and seed"),
        ("evaluate", cmd_evaluate, "greedy evaluation episode per mode and seed"),
        ("run", cmd_run, "all stages, series files, manifest and figures"),
    ):
        sp = sub.add_parser(verb, help=text)
        sweep(sp)
        sp.set_defaults(fn=fn)
        if verb == "run":
            sp.add_argument("--no-figures", action="store_true")

    c = sub.add_parser("compare", help="cumulative throughput gap between two runs")
    c.add_argument("run_a")
    c.add_argument("run_b")
    c.add_argument("--mode-a", default="gplight")
    c.add_argument("--mode-b", default=None, help="defaults to --mode-a")
    c.add_argument("--out", required=True)
    c.add_argument("--no-figures", action="store_true")
    c.set_defaults(fn=cmd_compare)

    r = sub.add_parser("report", help="re-render figures for a finished run")
    r.add_argument("run_dir")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except ex.ConfigError as exc:
        print(f"gplight: error {exc}", file=sys.stderr)
        return 2
    except ex.StageError as exc:
        print(f"gplight: error {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
