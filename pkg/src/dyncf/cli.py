"""Command-line entry point: ``dyncf {preprocess,train,replay,sweep,report}``."""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import data
from .checkpoint import save_checkpoint
from .config import ConfigError, RunConfig, load_config, resolve_dataset
from .evaluation import replay, split
from .plotting import build_report
from .streaming import MODEL_KINDS, make_model

log = logging.getLogger("dyncf")

# CLI flag -> config key
_OVERRIDES = {
    "dataset": "dataset", "model": "model", "seed": "seed", "rank": "rank", "ranks": "ranks",
    "L": "L", "f": "f", "strategy": "strategy", "sigma": "sigma", "train_frac": "train_frac",
    "valid_frac": "valid_frac", "n_chunks": "n_chunks", "top_n": "top_n",
    "output_dir": "output_dir",
}


class UsageError(Exception):
    pass


def _add_run_options(p: argparse.ArgumentParser, seed_required: bool):
    p.add_argument("--config", help="INI file with a [run] section")
    p.add_argument("--seed", type=int, required=seed_required)
    p.add_argument("--dataset", help="preprocessed CSV event log")
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--rank", type=int, help="matrix rank")
    p.add_argument("--ranks", help="tensor ranks, e.g. 32,32,5")
    p.add_argument("--L", type=int, dest="L", help="window length")
    p.add_argument("--f", type=float, dest="f", help="attention decay exponent")
    p.add_argument("--strategy", choices=("incremental", "zero", "gaussian"))
    p.add_argument("--sigma", type=float)
    p.add_argument("--train-frac", type=float, dest="train_frac")
    p.add_argument("--valid-frac", type=float, dest="valid_frac")
    p.add_argument("--n-chunks", type=int, dest="n_chunks")
    p.add_argument("--top-n", type=int, dest="top_n")
    p.add_argument("--output-dir", dest="output_dir")


def _run_config(args) -> RunConfig:
    overrides = {key: getattr(args, flag, None) for flag, key in _OVERRIDES.items()}
    return load_config(args.config, overrides)


def _plan(cfg: RunConfig, config_path):
    events = data.ingest(resolve_dataset(cfg, config_path))
    return split(events, cfg.train_frac, cfg.valid_frac, cfg.n_chunks)


# ---------------------------------------------------------------- commands


def cmd_preprocess(args) -> int:
    if args.synthetic:
        events = data.synthetic_events(n_users=args.users, n_items=args.items, n_days=args.days,
                                       seed=args.seed)
    else:
        if not args.input:
            raise UsageError("preprocess needs an input file or --synthetic")
        events = data.ingest(args.input)
        preset = data.PRESETS.get(args.preset, {}) if args.preset else {}
        min_inter = args.min_interactions or preset.get("min_interactions", 5)
        tail = args.tail_frac if args.tail_frac is not None else preset.get("tail_frac")
        events = data.preprocess(events, min_inter, tail)
    data.write_events(events, args.output)
    stats = data.dataset_stats(events)
    print(f"wrote {args.output}: {stats['n_users']} users, {stats['n_items']} items, "
          f"{stats['n_actions']} actions, density {stats['density_pct']:.3f}%")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    plan = _plan(cfg, args.config)
    model = make_model(cfg.model_config())
    model.fit(plan.fit_log())
    out = Path(args.checkpoint or Path(cfg.output_dir) / f"{cfg.model}.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model.state, out, cfg.to_dict())
    print(f"trained {cfg.model} on {len(plan.fit_log())} events; checkpoint {out}")
    return 0


def _progress(record):
    fmt = lambda v: "  n/a" if v is None else f"{v:.4f}"  # noqa: E731
    print(f"chunk {record.chunk:4d}  hr {fmt(record.hr)}  mrr {fmt(record.mrr)}  "
          f"wji {fmt(record.wji)}  users {record.n_users:5d}  update {record.update_seconds:.3f}s",
          flush=True)


def _replay_one(cfg: RunConfig, plan, out_dir: Path, quiet: bool):
    report = replay(cfg.model_config(), plan, cfg.top_n, cfg.stability_users,
                    progress=None if quiet else _progress)
    report.config = {**report.config, "run": cfg.to_dict()}
    report.write(out_dir)
    return report


def cmd_replay(args) -> int:
    cfg = _run_config(args)
    plan = _plan(cfg, args.config)
    out_dir = Path(cfg.output_dir)
    report = _replay_one(cfg, plan, out_dir, args.quiet)
    avg = report.averages()
    print(f"{cfg.model}: hr {avg['hr']} mrr {avg['mrr']} wji {avg['wji']}; reports in {out_dir}")
    return 0


def _grid(cfg: RunConfig, specs: list[str]) -> dict:
    from .config import parse_grid

    grid = dict(cfg.sweep)
    for spec in specs or []:
        if "=" not in spec:
            raise UsageError(f"--grid expects key=v1,v2 (ranks use ';' between triples), got {spec!r}")
        key, raw = spec.split("=", 1)
        grid[key.strip()] = parse_grid(key.strip(), raw)
    if not grid:
        grid = {"rank": [cfg.rank]} if not cfg.model_config().is_tensor else {"ranks": [cfg.ranks]}
    return grid


def _tag(key, value) -> str:
    if isinstance(value, (tuple, list)):
        value = "x".join(str(v) for v in value)
    return f"{key}{value}"


def cmd_sweep(args) -> int:
    cfg = _run_config(args)
    grid = _grid(cfg, args.grid)
    plan = _plan(cfg, args.config)
    root = Path(cfg.output_dir)
    rows = []
    keys = sorted(grid)
    for values in itertools.product(*(grid[k] for k in keys)):
        point = dict(zip(keys, values))
        try:
            run_cfg = replace(cfg, **point, sweep={})
        except (ConfigError, TypeError) as exc:
            raise UsageError(f"invalid sweep point {point}: {exc}") from None
        name = "_".join([cfg.model] + [_tag(k, v) for k, v in point.items()])
        report = _replay_one(run_cfg, plan, root / name, quiet=True)
        avg = report.averages()
        rows.append({"run": name, **{k: _tag("", v) for k, v in point.items()},
                     "hr": avg["hr"], "mrr": avg["mrr"], "wji": avg["wji"]})
        print(f"{name}: hr {avg['hr']} mrr {avg['mrr']} wji {avg['wji']}", flush=True)
    scored = [r for r in rows if r["hr"] is not None]
    best = max(scored, key=lambda r: r["hr"]) if scored else None
    root.mkdir(parents=True, exist_ok=True)
    with (root / "sweep.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["run", *keys, "hr", "mrr", "wji"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    (root / "sweep_best.json").write_text(json.dumps({"best": best, "n_runs": len(rows)}, indent=2) + "\n")
    print(f"best by HR: {best['run'] if best else 'none'}")
    return 0


def cmd_report(args) -> int:
    run_dirs = [Path(d) for d in args.runs]
    missing = [str(d) for d in run_dirs if not (d / "summary.json").exists()]
    if missing:
        raise UsageError(f"not a replay output directory: {', '.join(missing)}")
    out = build_report(run_dirs, args.out)
    print(f"table {out['table']}")
    for fig in out["figures"]:
        print(f"figure {fig}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyncf", description="Dynamic matrix and tensor recommenders.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="ingest and filter an event log, or generate a synthetic one")
    p.add_argument("input", nargs="?")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--preset", choices=sorted(data.PRESETS))
    p.add_argument("--min-interactions", type=int, dest="min_interactions")
    p.add_argument("--tail-frac", type=float, dest="tail_frac")
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--users", type=int, default=2000)
    p.add_argument("--items", type=int, default=500)
    p.add_argument("--days", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="fit a model on the training part and save a checkpoint")
    _add_run_options(p, seed_required=True)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("replay", help="day-by-day score-then-update replay")
    _add_run_options(p, seed_required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("sweep", help="replay every point of a hyper-parameter grid")
    _add_run_options(p, seed_required=True)
    p.add_argument("--grid", action="append", help="key=v1,v2 (repeatable)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="comparison table and figures for replay runs")
    p.add_argument("runs", nargs="+")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"dyncf {args.command}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"dyncf {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
