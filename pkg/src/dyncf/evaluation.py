"""Time-based split, top-n metrics and the chunked score-then-update replay."""

from __future__ import annotations

import csv
import json
import logging
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .routing import ChunkGroups, classify_chunk  # noqa: F401  (re-exported)
from .seq_tensor import EventLog
from .streaming import ModelConfig, StreamingModel, make_model

log = logging.getLogger(__name__)

DAY_SECONDS = 86400
METRICS = ("hr", "mrr", "wji", "n_users", "n_excluded")


class InsufficientDataError(ValueError):
    pass


@dataclass
class ChunkPlan:
    train: EventLog
    validation: EventLog
    chunks: list
    days: list = field(default_factory=list)

    def fit_log(self) -> EventLog:
        """Train with the validation tail merged back."""
        return self.train.concat(self.validation) if len(self.validation) else self.train


def utc_day(timestamps) -> np.ndarray:
    return np.floor_divide(np.asarray(timestamps, dtype=np.float64), DAY_SECONDS).astype(np.int64)


def split(events: EventLog, train_frac: float, valid_frac: float, n_chunks: int) -> ChunkPlan:
    """Chronological split into train, a validation tail of train, and daily chunks.

    The first ``train_frac`` of events (by count) form the training part, of
    which the last ``valid_frac`` is held out for validation. Test events are
    grouped by UTC calendar day; the first chunk is the remainder of the day
    in which training ends. Days without events are skipped.
    """
    for name, frac in (("train_frac", train_frac), ("valid_frac", valid_frac)):
        if not 0 < frac < 1:
            raise ValueError(f"{name} must be in (0, 1), got {frac}")
    if n_chunks < 0:
        raise ValueError("n_chunks must be non-negative")
    cut = int(len(events) * train_frac)
    train_all = events[:cut]
    n_valid = max(1, int(round(cut * valid_frac))) if cut > 1 else 0
    train, validation = train_all[:cut - n_valid], train_all[cut - n_valid:]
    rest = events[cut:]
    days = utc_day(rest.timestamps)
    unique_days = list(dict.fromkeys(days.tolist()))
    if len(unique_days) < n_chunks:
        raise InsufficientDataError(
            f"{n_chunks} chunks requested but only {len(unique_days)} distinct days follow the training part"
        )
    chosen = unique_days[:n_chunks]
    chunks = [rest[days == d] for d in chosen]
    return ChunkPlan(train, validation, chunks, chosen)


# ------------------------------------------------------------------ metrics


def rank_of(target, ranked: list, n: int) -> int | None:
    """1-based position of ``target`` in the first ``n`` entries, else None."""
    for pos, item in enumerate(ranked[:n], start=1):
        if item == target:
            return pos
    return None


def hit_rate(ranks: list, n: int) -> float:
    if not ranks:
        raise ValueError("hit rate is undefined without users")
    return sum(1 for r in ranks if r is not None and r <= n) / len(ranks)


def mrr(ranks: list, n: int) -> float:
    if not ranks:
        raise ValueError("MRR is undefined without users")
    return sum(1.0 / r for r in ranks if r is not None and r <= n) / len(ranks)


def _boi_weights(items: list, n: int) -> dict:
    w: dict = {}
    for pos, item in enumerate(items[:n], start=1):
        w.setdefault(item, 1.0 / pos)
    return w


def wji(list_prev: list, list_curr: list, n: int) -> float:
    """Weighted Jaccard index of two ranked lists with weights ``1/position``."""
    a, b = _boi_weights(list(list_prev), n), _boi_weights(list(list_curr), n)
    keys = set(a) | set(b)
    if not keys:
        return 1.0
    num = sum(min(a.get(k, 0.0), b.get(k, 0.0)) for k in keys)
    den = sum(max(a.get(k, 0.0), b.get(k, 0.0)) for k in keys)
    return num / den


@dataclass
class ChunkMetrics:
    hr: float | None
    mrr: float | None
    n_users: int
    n_excluded: int


def evaluate_chunk(model: StreamingModel, chunk: EventLog, n: int) -> ChunkMetrics:
    """HR@n and MRR@n for the first chunk item of every user the model knows.

    Users whose target item is not indexed by the model cannot be ranked and
    are counted in ``n_excluded``. Without eligible users the metrics are None.
    """
    targets: dict = {}
    for u, i in chunk.pairs():
        if u not in targets and model.knows_user(u):
            targets[u] = i
    ranks = []
    excluded = 0
    for u, target in targets.items():
        if not model.knows_item(target):
            excluded += 1
            continue
        ranks.append(rank_of(target, model.recommend(u, n), n))
    if not ranks:
        return ChunkMetrics(None, None, 0, excluded)
    return ChunkMetrics(hit_rate(ranks, n), mrr(ranks, n), len(ranks), excluded)


def select_stability_users(train: EventLog, chunks: list, count: int = 50) -> list:
    """Users present in train that appear in the most chunks (ties: more train events, then id)."""
    train_counts = Counter(train.users.tolist())
    presence = Counter()
    for chunk in chunks:
        presence.update(set(chunk.users.tolist()))
    eligible = [u for u in train_counts if presence[u] > 0] or list(train_counts)
    eligible.sort(key=lambda u: (-presence[u], -train_counts[u], str(u)))
    return eligible[:count]


def stability_step(model: StreamingModel, users: list, previous: dict, n: int) -> tuple[float | None, dict]:
    current = {u: model.recommend(u, n) for u in users if model.knows_user(u)}
    scores = [wji(previous[u], current[u], n) for u in current if u in previous]
    return (float(np.mean(scores)) if scores else None), current


def stability_track(model: StreamingModel, target_users: list, chunks: list, n: int,
                    update: bool = True) -> list:
    """Mean WJI between the lists before and after each chunk's update."""
    _, lists = stability_step(model, target_users, {}, n)
    out = []
    for chunk in chunks:
        if update:
            model.update(chunk)
        value, lists = stability_step(model, target_users, lists, n)
        out.append(value)
    return out


# ------------------------------------------------------------------ replay


@dataclass
class ChunkRecord:
    chunk: int
    day: int
    hr: float | None
    mrr: float | None
    wji: float | None
    n_users: int
    n_excluded: int
    update_seconds: float
    groups: dict


@dataclass
class ReplayReport:
    config: dict
    n: int
    stability_users: int
    records: list = field(default_factory=list)

    def averages(self) -> dict:
        out = {}
        for key in ("hr", "mrr", "wji"):
            vals = [getattr(r, key) for r in self.records if getattr(r, key) is not None]
            out[key] = float(np.mean(vals)) if vals else None
        times = [r.update_seconds for r in self.records]
        out["update_seconds"] = float(np.mean(times)) if times else None
        return out

    def summary(self) -> dict:
        avg = self.averages()
        avg.pop("update_seconds")
        return {
            "config": self.config,
            "top_n": self.n,
            "n_chunks": len(self.records),
            "stability_users": self.stability_users,
            "averages": avg,
            "excluded_targets": sum(r.n_excluded for r in self.records),
        }

    def write(self, out_dir) -> dict:
        """Write ``report.csv``, ``summary.json`` (deterministic) and ``timings.csv``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "report": out_dir / "report.csv",
            "summary": out_dir / "summary.json",
            "timings": out_dir / "timings.csv",
        }
        with paths["report"].open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["chunk", "day", "metric", "value"])
            for r in self.records:
                for key in METRICS:
                    writer.writerow([r.chunk, r.day, key, _fmt(getattr(r, key))])
                for key, value in r.groups.items():
                    writer.writerow([r.chunk, r.day, f"events_{key}", value])
        paths["summary"].write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        with paths["timings"].open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["chunk", "update_seconds"])
            for r in self.records:
                writer.writerow([r.chunk, f"{r.update_seconds:.6f}"])
        return paths


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def replay(config: ModelConfig | StreamingModel, plan: ChunkPlan, n: int = 5,
           stability_users: int = 50, progress=None) -> ReplayReport:
    """Fit on train (validation merged back), then score and update chunk by chunk.

    Only ``update`` is timed. The WJI of a chunk compares the target users'
    lists before and after that chunk's update.
    """
    model = make_model(config) if isinstance(config, ModelConfig) else config
    if not isinstance(model, StreamingModel):
        raise TypeError("replay expects a ModelConfig or a StreamingModel")
    if n < 1:
        raise ValueError("top-n must be positive")
    fit_log = plan.fit_log()
    users = select_stability_users(fit_log, plan.chunks, stability_users) if plan.chunks else []
    report = ReplayReport(asdict(model.config), n, len(users))
    if not plan.chunks:
        return report
    model.fit(fit_log)
    _, lists = stability_step(model, users, {}, n)
    for k, chunk in enumerate(plan.chunks):
        metrics = evaluate_chunk(model, chunk, n)
        groups = classify_chunk(chunk, model.user_map, model.item_map).counts()
        t0 = time.perf_counter()
        model.update(chunk)
        elapsed = time.perf_counter() - t0
        value, lists = stability_step(model, users, lists, n)
        day = plan.days[k] if k < len(plan.days) else k
        record = ChunkRecord(k, int(day), metrics.hr, metrics.mrr, value, metrics.n_users,
                             metrics.n_excluded, elapsed, groups)
        report.records.append(record)
        if progress is not None:
            progress(record)
    return report

