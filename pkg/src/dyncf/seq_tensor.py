"""Event logs, user windows and the positional interaction tensor.

Positions are 0-based: a user's most recent item sits at position ``L - 1``
and a history of ``n < L`` items occupies positions ``L - n .. L - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg as sla

from .linalg import SparseCoo


class UnknownEntityError(KeyError):
    """An event refers to a user or item the model has not indexed."""


@dataclass
class EventLog:
    """Timestamped implicit interactions, kept in stable timestamp order."""

    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=object)
        self.items = np.asarray(self.items, dtype=object)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if not (len(self.users) == len(self.items) == len(self.timestamps)):
            raise ValueError("event columns differ in length")
        if not np.all(np.isfinite(self.timestamps)):
            raise ValueError("timestamps must be finite")
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) < 0):
            order = np.argsort(self.timestamps, kind="stable")
            self.users = self.users[order]
            self.items = self.items[order]
            self.timestamps = self.timestamps[order]

    @classmethod
    def from_records(cls, records: Iterable[tuple]) -> "EventLog":
        records = list(records)
        if not records:
            return cls.empty()
        users, items, ts = zip(*records)
        return cls(np.array(users, dtype=object), np.array(items, dtype=object), ts)

    @classmethod
    def empty(cls) -> "EventLog":
        return cls(np.array([], dtype=object), np.array([], dtype=object), np.array([]))

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, key) -> "EventLog":
        if isinstance(key, (int, np.integer)):
            return (self.users[key], self.items[key], float(self.timestamps[key]))
        return EventLog(self.users[key], self.items[key], self.timestamps[key])

    def __iter__(self):
        return zip(self.users, self.items, self.timestamps)

    def concat(self, other: "EventLog") -> "EventLog":
        return EventLog(
            np.concatenate([self.users, other.users]),
            np.concatenate([self.items, other.items]),
            np.concatenate([self.timestamps, other.timestamps]),
        )

    def pairs(self) -> list[tuple]:
        return list(zip(self.users.tolist(), self.items.tolist()))


class IdMap:
    """Bijection between external ids and dense internal indices."""

    def __init__(self, ids: Iterable = ()):
        self._index: dict = {}
        self.ids: list = []
        for x in ids:
            self.add(x)

    def add(self, ext) -> int:
        idx = self._index.get(ext)
        if idx is None:
            idx = len(self.ids)
            self._index[ext] = idx
            self.ids.append(ext)
        return idx

    def extend(self, ids: Iterable) -> list[int]:
        return [self.add(x) for x in ids]

    def index(self, ext) -> int:
        try:
            return self._index[ext]
        except KeyError:
            raise UnknownEntityError(ext) from None

    def get(self, ext, default=None):
        return self._index.get(ext, default)

    def __contains__(self, ext) -> bool:
        return ext in self._index

    def __len__(self) -> int:
        return len(self.ids)

    def copy(self) -> "IdMap":
        return IdMap(self.ids)

    def __eq__(self, other) -> bool:
        return isinstance(other, IdMap) and self.ids == other.ids


@dataclass
class UserHistory:
    user: int
    items: list


@dataclass(frozen=True)
class AttentionSpec:
    L: int
    f: float = 0.0

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"window length must be a positive integer, got {self.L}")
        if not np.isfinite(self.f) or self.f < 0:
            raise ValueError(f"attention exponent must be >= 0, got {self.f}")

    def matrix(self) -> np.ndarray:
        return attention_matrix(self)

    def inverse_transpose(self) -> np.ndarray:
        """``A^{-T}`` by triangular back-substitution (cached)."""
        return _inverse_transpose(int(self.L), float(self.f)).copy()


def attention_matrix(spec: AttentionSpec) -> np.ndarray:
    """Lower-triangular Toeplitz matrix with ``(d + 1) ** -f`` on band ``d``."""
    return _attention(int(spec.L), float(spec.f)).copy()


@lru_cache(maxsize=64)
def _attention(L: int, f: float) -> np.ndarray:
    bands = np.arange(1, L + 1, dtype=np.float64) ** (-f)
    a = sla.toeplitz(bands, np.zeros(L))
    a.setflags(write=False)
    return a


@lru_cache(maxsize=64)
def _inverse_transpose(L: int, f: float) -> np.ndarray:
    a = _attention(L, f)
    inv_t = sla.solve_triangular(a.T, np.eye(L), lower=False)
    inv_t.setflags(write=False)
    return inv_t


# ------------------------------------------------------------ histories


def push_items(window: Sequence[int], new_items: Iterable[int], L: int) -> list[int]:
    """Append items to a window, keeping only the latest copy of each and the last ``L``."""
    out = list(window)
    for item in new_items:
        if item in out:
            out.remove(item)
        out.append(item)
    return out[-L:] if len(out) > L else out


def index_entities(log: EventLog) -> tuple[IdMap, IdMap]:
    """Id maps in order of first appearance."""
    return IdMap(dict.fromkeys(log.users.tolist())), IdMap(dict.fromkeys(log.items.tolist()))


def build_histories(log: EventLog, L: int, user_map: IdMap | None = None,
                    item_map: IdMap | None = None) -> list[UserHistory]:
    """Per-user windows of the last ``min(n_i, L)`` distinct items, oldest first."""
    if L < 1:
        raise ValueError("L must be >= 1")
    if user_map is None or item_map is None:
        user_map, item_map = index_entities(log)
    windows: dict[int, list[int]] = {}
    for u, i, _ in log:
        uid = user_map.index(u)
        windows[uid] = push_items(windows.get(uid, ()), [item_map.index(i)], L)
    return [UserHistory(u, w) for u, w in sorted(windows.items())]


def window_entries(user: int, items: Sequence[int], L: int) -> list[tuple[int, int, int]]:
    n = len(items)
    return [(user, item, L - n + p) for p, item in enumerate(items)]


def _as_window_map(histories) -> Mapping[int, Sequence[int]]:
    if isinstance(histories, Mapping):
        return histories
    return {h.user: h.items for h in histories}


def build_tensor(histories, L: int, shape: tuple[int, int]) -> SparseCoo:
    """Binary ``M x N x L`` tensor with item ``j`` at position ``k`` of user ``i``'s window."""
    m, n = shape
    coords = []
    for user, items in _as_window_map(histories).items():
        if len(items) > L:
            raise ValueError(f"user {user} window longer than L={L}")
        coords.extend(window_entries(user, items, L))
    coords = np.array(coords, dtype=np.int64).reshape(-1, 3)
    if coords.size and (coords[:, 0].max() >= m or coords[:, 1].max() >= n or coords.min() < 0):
        raise IndexError("history index outside the tensor shape")
    return SparseCoo((m, n, L), coords, np.ones(coords.shape[0]))


def apply_attention(x: SparseCoo, a: np.ndarray) -> SparseCoo:
    """``x x3 a.T``: an entry at position ``l`` spreads to every ``k`` with ``a[l, k] != 0``."""
    a = np.asarray(a, dtype=np.float64)
    if x.ndim != 3 or a.shape != (x.shape[2], x.shape[2]):
        raise ValueError(f"attention of shape {a.shape} does not fit tensor {x.shape}")
    if x.nnz == 0:
        return SparseCoo(x.shape)
    rows = a[x.coords[:, 2]]                      # nnz x L, weights a[l, k]
    hit, k = np.nonzero(rows)
    coords = np.column_stack([x.coords[hit, 0], x.coords[hit, 1], k])
    return SparseCoo(x.shape, coords, x.values[hit] * rows[hit, k])


def delta_tensor(old_windows, new_events: Sequence[tuple[int, int]],
                 spec: AttentionSpec, shape: tuple[int, int]):
    """Attention-weighted increment for a batch of events on indexed entities.

    ``old_windows`` maps user index to that user's current window;
    ``new_events`` are ``(user, item)`` index pairs in time order. Returns
    ``(delta, new_windows)`` where ``new_windows`` holds the updated windows
    of the affected users and ``delta`` is the exact difference of their
    slices, so adding it to the old weighted tensor gives the new one.
    """
    old_windows = _as_window_map(old_windows)
    m, n = shape
    L = spec.L
    touched: dict[int, list[int]] = {}
    for u, i in new_events:
        if not (0 <= u < m):
            raise UnknownEntityError(f"user index {u}")
        if not (0 <= i < n):
            raise UnknownEntityError(f"item index {i}")
        touched.setdefault(u, []).append(i)
    new_windows = {u: push_items(old_windows.get(u, ()), items, L) for u, items in touched.items()}
    coords, values = [], []
    for u, window in new_windows.items():
        for entry in window_entries(u, old_windows.get(u, ()), L):
            coords.append(entry)
            values.append(-1.0)
        for entry in window_entries(u, window, L):
            coords.append(entry)
            values.append(1.0)
    raw = SparseCoo((m, n, L), np.array(coords, dtype=np.int64).reshape(-1, 3), values)
    return apply_attention(raw, spec.matrix()), new_windows


def delta_matrix(new_events: Sequence[tuple[int, int]], seen, shape: tuple[int, int]) -> SparseCoo:
    """Binary increments for ``(user, item)`` pairs not already in ``seen``.

    ``seen`` is a set of index pairs; it is not modified.
    """
    m, n = shape
    fresh = []
    for u, i in new_events:
        if not (0 <= u < m):
            raise UnknownEntityError(f"user index {u}")
        if not (0 <= i < n):
            raise UnknownEntityError(f"item index {i}")
        if (u, i) not in seen:
            fresh.append((u, i))
    fresh = list(dict.fromkeys(fresh))
    return SparseCoo(shape, np.array(fresh, dtype=np.int64).reshape(-1, 2), np.ones(len(fresh)))


def restrict(x: SparseCoo, mode: int, keep) -> SparseCoo:
    """Entries of ``x`` whose index along ``mode`` (1-based) lies in ``keep``."""
    keep = np.asarray(sorted(keep), dtype=np.int64)
    mask = np.isin(x.coords[:, mode - 1], keep)
    return SparseCoo(x.shape, x.coords[mask], x.values[mask])


def remap(x: SparseCoo, mode: int, indices: Sequence[int]) -> SparseCoo:
    """Re-index mode ``mode`` so that ``indices[p]`` becomes ``p``; other entries dropped."""
    lookup = {int(v): p for p, v in enumerate(indices)}
    col = x.coords[:, mode - 1]
    mask = np.array([c in lookup for c in col.tolist()], dtype=bool)
    coords = x.coords[mask].copy()
    coords[:, mode - 1] = [lookup[c] for c in col[mask].tolist()]
    shape = list(x.shape)
    shape[mode - 1] = len(indices)
    return SparseCoo(shape, coords, x.values[mask])



def build_matrix(pairs: Iterable[tuple[int, int]], shape: tuple[int, int]) -> SparseCoo:
    """Binary user x item matrix; repeated pairs count once."""
    pairs = list(dict.fromkeys((int(u), int(i)) for u, i in pairs))
    return SparseCoo(shape, np.array(pairs, dtype=np.int64).reshape(-1, 2), np.ones(len(pairs)))
