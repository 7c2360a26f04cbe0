"""Stateful recommenders driven by the replay loop.

Every model keeps an :class:`InteractionStore` of what it has seen and
exposes ``fit(log)``, ``update(chunk)`` and ``recommend(user, n)``. The
dynamic models (PSIRec, TIRec, TIRecA) route each chunk through the four
update groups of :mod:`dyncf.routing`; the baselines retrain on everything.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import baselines, psirec, tirec
from .linalg import SparseCoo
from .routing import classify_chunk
from .seq_tensor import (
    AttentionSpec,
    EventLog,
    UnknownEntityError,
    apply_attention,
    build_matrix,
    push_items,
    window_entries,
)

MODEL_KINDS = ("psirec", "svd", "tirec", "tireca", "tdrec", "tdrec_reinit")
STRATEGIES = ("incremental", "zero", "gaussian")


@dataclass
class ModelConfig:
    kind: str
    rank: int = 10
    ranks: tuple = (32, 32, 5)
    L: int = 10
    f: float = 0.0
    strategy: str | None = None
    sigma: float = 0.0
    block: bool = False
    hooi_max_iters: int = 50
    hooi_tol: float = 1e-6
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.strategy is None:
            self.strategy = "zero" if self.kind == "tireca" else "incremental"
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.kind == "tireca" and self.strategy == "incremental":
            raise ValueError("tireca attaches new entities; use strategy zero or gaussian")
        if self.kind == "tirec" and self.strategy != "incremental":
            raise ValueError("tirec adds new entities incrementally; use kind tireca for attachment")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        self.ranks = tuple(int(r) for r in self.ranks)

    @property
    def is_tensor(self) -> bool:
        return self.kind in ("tirec", "tireca", "tdrec", "tdrec_reinit")

    @property
    def attention(self) -> AttentionSpec:
        return AttentionSpec(self.L, self.f)


class InteractionStore:
    """Seen items and last-``L`` windows per user, keyed by external ids."""

    def __init__(self, L: int):
        self.L = L
        self.seen: dict = {}
        self.windows: dict = {}
        self.log = EventLog.empty()

    def add(self, events: EventLog):
        for u, i in events.pairs():
            self.seen.setdefault(u, {})[i] = None
            self.windows[u] = push_items(self.windows.get(u, ()), [i], self.L)
        self.log = self.log.concat(events) if len(self.log) else events

    def next_windows(self, events: EventLog) -> dict:
        touched: dict = {}
        for u, i in events.pairs():
            touched.setdefault(u, []).append(i)
        return {u: push_items(self.windows.get(u, ()), its, self.L) for u, its in touched.items()}


class StreamingModel:
    kind = ""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.store = InteractionStore(config.L)
        self.state = None
        self.rng = np.random.default_rng(config.seed)
        self.last_info: dict = {}

    @property
    def user_map(self):
        return self.state.user_map

    @property
    def item_map(self):
        return self.state.item_map

    def knows_user(self, user) -> bool:
        return self.state is not None and user in self.state.user_map

    def knows_item(self, item) -> bool:
        return self.state is not None and item in self.state.item_map

    def fit(self, log: EventLog):
        raise NotImplementedError

    def update(self, chunk: EventLog):
        raise NotImplementedError

    def _seen_indices(self, user) -> list[int]:
        item_map = self.state.item_map
        return [item_map.index(i) for i in self.store.seen.get(user, ())]

    def recommend(self, user, n: int, exclude_seen: bool = True) -> list:
        """Top-``n`` external item ids for a known user."""
        if not self.knows_user(user):
            raise UnknownEntityError(f"user {user!r} is not indexed by the model")
        idx = self._recommend_indices(user, n, exclude_seen)
        ids = self.state.item_map.ids
        return [ids[j] for j in idx]


# ------------------------------------------------------------------ matrix


class MatrixModel(StreamingModel):
    def fit(self, log: EventLog):
        self.store = InteractionStore(self.config.L)
        self.store.add(log)
        self.state = baselines.puresvd_retrain(log, self.config.rank, seed=self.config.seed)

    def _recommend_indices(self, user, n, exclude_seen):
        seen = self._seen_indices(user)
        return psirec.recommend(self.state, seen, n, exclude_seen=exclude_seen)


class PureSVDModel(MatrixModel):
    kind = "svd"

    def update(self, chunk: EventLog):
        self.store.add(chunk)
        self.state = baselines.puresvd_retrain(self.store.log, self.config.rank, seed=self.config.seed)


class PSIRecModel(MatrixModel):
    kind = "psirec"

    def update(self, chunk: EventLog):
        cfg = self.config
        s = self.state
        groups = classify_chunk(chunk, s.user_map, s.item_map)
        incremental = cfg.strategy == "incremental"
        pending = [groups.known]
        if groups.block_users and (incremental or cfg.block):
            bu = {u: k for k, u in enumerate(groups.block_users)}
            bi = {i: k for k, i in enumerate(groups.block_items)}
            block = build_matrix(
                [(bu[u], bi[i]) for u, i in groups.new_entity.pairs()],
                (len(bu), len(bi)),
            )
            s = psirec.add_block(s, block, groups.block_users, groups.block_items, seed=cfg.seed)
        else:
            pending.append(groups.new_entity)
        if incremental:
            if groups.new_users:
                nu = {u: k for k, u in enumerate(groups.new_users)}
                rows = build_matrix(
                    [(nu[u], s.item_map.index(i)) for u, i in groups.new_user.pairs()],
                    (len(nu), s.shape[1]),
                )
                s = psirec.add_rows_or_cols(s, rows, "users", groups.new_users)
            if groups.new_items:
                ni = {i: k for k, i in enumerate(groups.new_items)}
                cols = build_matrix(
                    [(s.user_map.index(u), ni[i]) for u, i in groups.new_item.pairs()],
                    (s.shape[0], len(ni)),
                )
                s = psirec.add_rows_or_cols(s, cols, "items", groups.new_items)
        else:
            pending += [groups.new_user, groups.new_item]
            new_users = [u for u in dict.fromkeys(chunk.users.tolist()) if u not in s.user_map]
            new_items = [i for i in dict.fromkeys(chunk.items.tolist()) if i not in s.item_map]
            s = psirec.attach_embeddings(s, new_users, "users", cfg.strategy, cfg.sigma, self.rng)
            s = psirec.attach_embeddings(s, new_items, "items", cfg.strategy, cfg.sigma, self.rng)
        pairs = []
        for part in pending:
            pairs += part.pairs()
        fresh = [(u, i) for u, i in dict.fromkeys(pairs) if i not in self.store.seen.get(u, ())]
        delta = build_matrix([(s.user_map.index(u), s.item_map.index(i)) for u, i in fresh], s.shape)
        if delta.nnz:
            s = psirec.psi_update(s, delta)
        self.state = s
        self.store.add(chunk)
        self.last_info = groups.counts()


# ------------------------------------------------------------------ tensor


def _tensor_from_entries(entries, user_index, item_index, shape, spec: AttentionSpec) -> SparseCoo:
    coords = [(user_index[u], item_index[i], k) for u, i, k, _ in entries]
    values = [v for *_, v in entries]
    raw = SparseCoo(shape, np.array(coords, dtype=np.int64).reshape(-1, 3), values)
    return apply_attention(raw, spec.matrix())


class _MapIndex:
    """Adapter giving dict-style lookup on an IdMap."""

    def __init__(self, idmap):
        self.idmap = idmap

    def __getitem__(self, key):
        return self.idmap.index(key)


class TensorModel(StreamingModel):
    def fit(self, log: EventLog):
        self.store = InteractionStore(self.config.L)
        self.store.add(log)
        self.state, sweeps = baselines.tdrec_retrain(
            log, self.config.ranks, self.config.attention, seed=self.config.seed,
            max_iters=self.config.hooi_max_iters, tol=self.config.hooi_tol,
        )
        self.last_info = {"sweeps": sweeps}

    def _recommend_indices(self, user, n, exclude_seen):
        item_map = self.state.item_map
        window = [item_map.index(i) for i in self.store.windows.get(user, ())]
        return tirec.recommend(self.state, window, n, exclude_seen=exclude_seen,
                               seen=self._seen_indices(user))


class TDRecModel(TensorModel):
    kind = "tdrec"

    def update(self, chunk: EventLog):
        self.store.add(chunk)
        self.state, sweeps = baselines.tdrec_retrain(
            self.store.log, self.config.ranks, self.config.attention, seed=self.config.seed,
            max_iters=self.config.hooi_max_iters, tol=self.config.hooi_tol,
        )
        self.last_info = {"sweeps": sweeps}


class TDRecReinitModel(TensorModel):
    kind = "tdrec_reinit"

    def update(self, chunk: EventLog):
        self.store.add(chunk)
        self.state, sweeps = baselines.tdrec_reinit(
            self.store.log, self.config.ranks, self.config.attention, self.state,
            seed=self.config.seed, max_iters=self.config.hooi_max_iters, tol=self.config.hooi_tol,
        )
        self.last_info = {"sweeps": sweeps}


class TIRecModel(TensorModel):
    """Tucker-integrator model; ``tireca`` attaches new entities instead of adding them."""

    kind = "tirec"

    def update(self, chunk: EventLog):
        cfg = self.config
        spec = cfg.attention
        L = spec.L
        s = self.state
        groups = classify_chunk(chunk, s.user_map, s.item_map)
        incremental = cfg.strategy == "incremental"
        use_block = bool(groups.block_users) and (incremental or cfg.block)

        new_windows = self.store.next_windows(chunk)
        block_users = set(groups.block_users) if use_block else set()
        late_items = set(groups.new_items) if incremental else set()
        late_users = set(groups.new_users) if incremental else set()
        steps = {1: [], 2: [], 3: [], 4: []}
        for u, window in new_windows.items():
            entries = [(u, i, k, -1.0) for _, i, k in window_entries(u, self.store.windows.get(u, ()), L)]
            entries += [(u, i, k, 1.0) for _, i, k in window_entries(u, window, L)]
            for e in entries:
                item = e[1]
                if u in block_users:
                    steps[1].append(e)
                elif item in late_items:
                    steps[3].append(e)
                elif u in late_users:
                    steps[2].append(e)
                else:
                    steps[4].append(e)

        if use_block:
            bu = {u: k for k, u in enumerate(groups.block_users)}
            bi = {i: k for k, i in enumerate(groups.block_items)}
            block = _tensor_from_entries(steps[1], bu, bi, (len(bu), len(bi), L), spec)
            s = tirec.add_block(s, block, groups.block_users, groups.block_items)
        if incremental:
            if groups.new_users:
                nu = {u: k for k, u in enumerate(groups.new_users)}
                delta = _tensor_from_entries(steps[2], nu, _MapIndex(s.item_map),
                                             (len(nu), s.shape[1], L), spec)
                s = tirec.add_mode_vectors(s, delta, "users", groups.new_users)
            if groups.new_items:
                ni = {i: k for k, i in enumerate(groups.new_items)}
                delta = _tensor_from_entries(steps[3], _MapIndex(s.user_map), ni,
                                             (s.shape[0], len(ni), L), spec)
                s = tirec.add_mode_vectors(s, delta, "items", groups.new_items)
        else:
            new_users = [u for u in dict.fromkeys(chunk.users.tolist()) if u not in s.user_map]
            new_items = [i for i in dict.fromkeys(chunk.items.tolist()) if i not in s.item_map]
            s = tirec.attach_embeddings(s, new_users, "users", cfg.strategy, cfg.sigma, self.rng)
            s = tirec.attach_embeddings(s, new_items, "items", cfg.strategy, cfg.sigma, self.rng)
        delta = _tensor_from_entries(steps[4], _MapIndex(s.user_map), _MapIndex(s.item_map),
                                     s.shape, spec)
        if delta.nnz:
            s = tirec.ti_update(s, delta)
        self.state = s
        self.store.add(chunk)
        self.last_info = groups.counts()


class TIRecAModel(TIRecModel):
    kind = "tireca"


_MODELS = {
    "psirec": PSIRecModel,
    "svd": PureSVDModel,
    "tirec": TIRecModel,
    "tireca": TIRecAModel,
    "tdrec": TDRecModel,
    "tdrec_reinit": TDRecReinitModel,
}


def make_model(config: ModelConfig) -> StreamingModel:
    return _MODELS[config.kind](config)

