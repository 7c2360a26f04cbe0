"""Event-log ingestion, preprocessing presets and a synthetic stream generator."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .seq_tensor import EventLog

log = logging.getLogger(__name__)

_USER_COLS = {"user", "user_id", "userid", "uid"}
_ITEM_COLS = {"item", "item_id", "itemid", "movieid", "movie_id", "iid", "product_id"}

# Per-dataset preprocessing; ML-20M keeps every user and item but only the latest 20%.
PRESETS = {
    "ml-20m": {"min_interactions": 1, "tail_frac": 0.2, "train_frac": 0.4, "n_chunks": 200, "L": 20},
    "amz-b": {"min_interactions": 5, "tail_frac": None, "train_frac": 0.7, "n_chunks": 100, "L": 20},
    "amz-g": {"min_interactions": 5, "tail_frac": None, "train_frac": 0.7, "n_chunks": 100, "L": 20},
    "steam": {"min_interactions": 5, "tail_frac": None, "train_frac": 0.8, "n_chunks": 50, "L": 8},
}
VALID_FRAC = 0.0001


class DataFormatError(ValueError):
    """A malformed row in an input file."""


def _parse_timestamp(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    stamp = datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.timestamp()


def ingest(path, delimiter: str = ",") -> EventLog:
    """Read ``user, item, timestamp[, rating]`` rows into a sorted :class:`EventLog`.

    A header row is recognised by its column names. Ratings are dropped
    (every row is an implicit interaction) and exact duplicate
    ``(user, item, timestamp)`` rows are kept once.
    """
    path = Path(path)
    records = []
    seen = set()
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter=delimiter), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and row[0].strip().lower() in _USER_COLS | {"user_id"} and len(row) > 1 \
                    and row[1].strip().lower() in _ITEM_COLS:
                continue
            if len(row) < 3:
                raise DataFormatError(f"{path}:{lineno}: expected user, item, timestamp")
            user, item = row[0].strip(), row[1].strip()
            if not user or not item:
                raise DataFormatError(f"{path}:{lineno}: empty user or item id")
            try:
                ts = _parse_timestamp(row[2])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: unparseable timestamp {row[2]!r}") from None
            if not np.isfinite(ts):
                raise DataFormatError(f"{path}:{lineno}: non-finite timestamp")
            key = (user, item, ts)
            if key in seen:
                continue
            seen.add(key)
            records.append(key)
    return EventLog.from_records(records)


def write_events(events: EventLog, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "item_id", "timestamp"])
        for u, i, t in events:
            writer.writerow([u, i, repr(float(t)) if not float(t).is_integer() else int(t)])


def preprocess(events: EventLog, min_interactions: int = 5, tail_frac: float | None = None) -> EventLog:
    """Optional chronological tail cut, then iterated p-core filtering.

    Users and items with fewer than ``min_interactions`` events are dropped
    repeatedly until both sides satisfy the floor. An empty result is
    logged and returned as an empty log.
    """
    if min_interactions < 1:
        raise ValueError("min_interactions must be >= 1")
    if tail_frac is not None:
        if not 0 < tail_frac <= 1:
            raise ValueError("tail_frac must be in (0, 1]")
        keep = int(round(len(events) * tail_frac))
        events = events[len(events) - keep:]
    while len(events):
        user_counts = Counter(events.users.tolist())
        item_counts = Counter(events.items.tolist())
        mask = np.array(
            [user_counts[u] >= min_interactions and item_counts[i] >= min_interactions
             for u, i in zip(events.users.tolist(), events.items.tolist())],
            dtype=bool,
        )
        if mask.all():
            break
        events = events[mask]
    if not len(events):
        log.warning("preprocessing removed every event (min_interactions=%d)", min_interactions)
    return events


def dataset_stats(events: EventLog) -> dict:
    n_users = len(set(events.users.tolist()))
    n_items = len(set(events.items.tolist()))
    density = 100.0 * len(events) / (n_users * n_items) if n_users and n_items else 0.0
    return {"n_users": n_users, "n_items": n_items, "n_actions": len(events), "density_pct": density}


# ------------------------------------------------------------- synthetic

DAY = 86400.0


def synthetic_events(n_users: int = 2000, n_items: int = 500, n_days: int = 100,
                     n_topics: int = 10, events_per_day: float = 0.6,
                     new_user_frac: float = 0.5, new_item_frac: float = 0.1,
                     follow_prob: float = 0.7, seed: int = 0,
                     start: float = 1_600_000_000.0) -> EventLog:
    """Sequential implicit-feedback stream with arriving users and items.

    Items are grouped into topics and ordered inside each topic; a user
    mostly continues with the next item of their current topic, otherwise
    jumps to a popular item of a preferred topic. A fraction of users and
    items only appear after the first half of the timeline, so every chunk
    of the second half mixes all four update groups.
    """
    rng = np.random.default_rng(seed)
    half = n_days // 2
    item_topic = rng.integers(0, n_topics, size=n_items)
    item_release = np.zeros(n_items)
    late_items = rng.choice(n_items, size=int(round(new_item_frac * n_items)), replace=False)
    item_release[late_items] = rng.uniform(half, n_days, size=late_items.size)
    popularity = rng.pareto(1.2, size=n_items) + 1.0
    topic_items = [np.flatnonzero(item_topic == t) for t in range(n_topics)]

    arrivals = rng.uniform(0, half, size=n_users)
    late_users = rng.random(n_users) < new_user_frac
    arrivals[late_users] = rng.uniform(half, n_days, size=late_users.sum())
    user_topics = rng.dirichlet(np.full(n_topics, 0.3), size=n_users)
    activity = rng.gamma(2.0, events_per_day / 2.0, size=n_users)

    records = []
    for u in range(n_users):
        t = arrivals[u]
        last = None
        consumed = set()
        while t < n_days:
            t += rng.exponential(1.0 / max(activity[u], 1e-3))
            if t >= n_days:
                break
            item = None
            if last is not None and rng.random() < follow_prob:
                peers = topic_items[item_topic[last]]
                pos = int(np.searchsorted(peers, last))
                for step in range(1, len(peers)):
                    cand = peers[(pos + step) % len(peers)]
                    if item_release[cand] <= t and cand not in consumed:
                        item = int(cand)
                        break
            if item is None:
                topic = rng.choice(n_topics, p=user_topics[u])
                peers = topic_items[topic]
                peers = peers[(item_release[peers] <= t)]
                peers = np.array([p for p in peers if p not in consumed], dtype=int)
                if peers.size == 0:
                    continue
                w = popularity[peers]
                item = int(rng.choice(peers, p=w / w.sum()))
            consumed.add(item)
            last = item
            records.append((f"u{u}", f"i{item}", start + t * DAY))
    return EventLog.from_records(records)
