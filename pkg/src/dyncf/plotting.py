"""Comparison table and figures for a set of replay runs."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

LABELS = {
    "psirec": "PSIRec",
    "svd": "SVD",
    "tirec": "TIRec",
    "tireca": "TIRecA",
    "tdrec": "TDRec",
    "tdrec_reinit": "TDRecReinit",
}

RC = {
    "figure.figsize": (6.0, 3.6),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "font.size": 9,
}


def load_run(run_dir) -> dict:
    """Summary, per-chunk metric series and update times of one replay run."""
    run_dir = Path(run_dir)
    summary = json.loads((run_dir / "summary.json").read_text())
    series: dict = {}
    with (run_dir / "report.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            if row["value"] == "":
                continue
            series.setdefault(row["metric"], {})[int(row["chunk"])] = float(row["value"])
    times = {}
    tpath = run_dir / "timings.csv"
    if tpath.exists():
        with tpath.open(newline="") as fh:
            times = {int(r["chunk"]): float(r["update_seconds"]) for r in csv.DictReader(fh)}
    cfg = summary["config"]
    label = cfg.get("label") or LABELS.get(cfg["kind"], cfg["kind"])
    return {"dir": run_dir, "label": label, "summary": summary, "series": series, "times": times}


def comparison_rows(runs: list) -> list[dict]:
    rows = []
    for run in runs:
        avg = run["summary"]["averages"]
        times = list(run["times"].values())
        rows.append({
            "model": run["label"],
            "run": run["dir"].name,
            "hr": avg["hr"],
            "mrr": avg["mrr"],
            "wji": avg["wji"],
            "update_seconds": sum(times) / len(times) if times else None,
            "top_n": run["summary"]["top_n"],
        })
    return rows


def write_table(rows: list[dict], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        n = rows[0]["top_n"] if rows else 5
        writer.writerow(["model", "run", f"HR@{n}", f"MRR@{n}", f"WJI@{n}", "update_seconds"])
        for r in rows:
            writer.writerow([r["model"], r["run"]] + [
                "" if r[k] is None else f"{r[k]:.4f}" for k in ("hr", "mrr", "wji")
            ] + ["" if r["update_seconds"] is None else f"{r['update_seconds']:.4f}"])
    return path


def _plot_series(runs, key, ylabel, path, log_scale=False):
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for run in runs:
            data = run["times"] if key == "update_seconds" else run["series"].get(key, {})
            if not data:
                continue
            xs = sorted(data)
            ax.plot(xs, [data[x] for x in xs], marker=".", lw=1, label=run["label"])
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.set_xlabel("chunk (day)")
        ax.set_ylabel(ylabel)
        if log_scale:
            ax.set_yscale("log")
        if ax.get_legend_handles_labels()[0]:
            ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
    return Path(path)


def render_figures(runs: list, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = runs[0]["summary"]["top_n"] if runs else 5
    return [
        _plot_series(runs, "hr", f"HR@{n}", out_dir / "hr.png"),
        _plot_series(runs, "wji", f"WJI@{n}", out_dir / "wji.png"),
        _plot_series(runs, "update_seconds", "update time, s", out_dir / "update_time.png", log_scale=True),
    ]


def build_report(run_dirs: list, out_dir) -> dict:
    runs = [load_run(d) for d in run_dirs]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = write_table(comparison_rows(runs), out_dir / "comparison.csv")
    figures = render_figures(runs, out_dir)
    return {"table": table, "figures": figures}
