"""Retraining baselines: PureSVD, TDRec and TDRecReinit.

Each call rebuilds the full data from every event seen so far; the returned
states are the same types the dynamic models use, so scoring is shared.
"""

from __future__ import annotations

import numpy as np

from . import psirec, tirec
from .linalg import TuckerFactors, hooi
from .seq_tensor import (
    AttentionSpec,
    EventLog,
    apply_attention,
    build_histories,
    build_matrix,
    build_tensor,
    index_entities,
)


def puresvd_retrain(all_events: EventLog, r: int, seed: int = 0) -> psirec.SvdState:
    """Rank-``r`` SVD of the cumulative binary matrix."""
    user_map, item_map = index_entities(all_events)
    pairs = [(user_map.index(u), item_map.index(i)) for u, i in all_events.pairs()]
    matrix = build_matrix(pairs, (len(user_map), len(item_map)))
    return psirec.init(matrix, r, user_map, item_map, seed=seed)


def cumulative_tensor(all_events: EventLog, spec: AttentionSpec):
    user_map, item_map = index_entities(all_events)
    histories = build_histories(all_events, spec.L, user_map, item_map)
    raw = build_tensor(histories, spec.L, (len(user_map), len(item_map)))
    return apply_attention(raw, spec.matrix()), user_map, item_map


def tdrec_retrain(all_events: EventLog, ranks, spec: AttentionSpec, seed: int = 0,
                  max_iters: int = 50, tol: float = 1e-6):
    """Cold-start HOOI on the cumulative attention-weighted tensor.

    Returns ``(state, sweeps)``.
    """
    x, user_map, item_map = cumulative_tensor(all_events, spec)
    ranks = tirec.check_ranks(ranks, x.shape)
    res = hooi(x, ranks, max_iters=max_iters, tol=tol, seed=seed)
    return tirec.TuckerState(res.factors, user_map, item_map, spec), res.sweeps


def tdrec_reinit(all_events: EventLog, ranks, spec: AttentionSpec, prev: tirec.TuckerState | None,
                 seed: int = 0, max_iters: int = 50, tol: float = 1e-6):
    """HOOI warm-started from ``prev``; rows of unseen entities start at zero.

    Returns ``(state, sweeps)``.
    """
    x, user_map, item_map = cumulative_tensor(all_events, spec)
    ranks = tirec.check_ranks(ranks, x.shape)
    init = None
    if prev is not None and prev.ranks == ranks:
        init = TuckerFactors(
            None,
            _carry_rows(prev.factors.u1, prev.user_map, user_map),
            _carry_rows(prev.factors.u2, prev.item_map, item_map),
            prev.factors.u3,
        )
    res = hooi(x, ranks, init=init, max_iters=max_iters, tol=tol, seed=seed)
    return tirec.TuckerState(res.factors, user_map, item_map, spec), res.sweeps


def _carry_rows(factor: np.ndarray, old_map, new_map) -> np.ndarray:
    out = np.zeros((len(new_map), factor.shape[1]))
    for idx, ext in enumerate(new_map.ids):
        j = old_map.get(ext)
        if j is not None:
            out[idx] = factor[j]
    return out
