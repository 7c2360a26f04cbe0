"""Sequence-aware Tucker model updated by the Tucker integrator.

State: ``X ~= C x1 U1 x2 U2 x3 U3`` for the attention-weighted
``users x items x positions`` tensor. ``U3`` always has ``L`` rows; ``U1``
and ``U2`` grow as users and items arrive. Deltas passed to the update
functions must already be attention weighted
(see :func:`dyncf.seq_tensor.delta_tensor`).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from .linalg import (
    SparseCoo,
    TuckerFactors,
    dense_svd,
    fold,
    hooi,
    hosvd,
    mode_product,
    project_all,
    project_others,
    thin_qr,
    tucker2,
    unfold,
)
from .psirec import _append_columns, _register
from .ranking import top_n
from .seq_tensor import AttentionSpec, IdMap, window_entries

USERS, ITEMS = "users", "items"
_MODE = {USERS: 1, ITEMS: 2, 1: 1, 2: 2}


@dataclass
class TuckerState:
    factors: TuckerFactors
    user_map: IdMap
    item_map: IdMap
    attention: AttentionSpec

    def __post_init__(self):
        c, u1, u2, u3 = self.factors
        if c.shape != (u1.shape[1], u2.shape[1], u3.shape[1]):
            raise ValueError("core shape does not match factor column counts")
        if u3.shape[0] != self.attention.L:
            raise ValueError("position factor must have L rows")
        if len(self.user_map) != u1.shape[0] or len(self.item_map) != u2.shape[0]:
            raise ValueError("id maps do not match factor row counts")

    @property
    def ranks(self) -> tuple[int, int, int]:
        return self.factors.ranks

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(u.shape[0] for u in self.factors.factors)

    def reconstruct(self) -> np.ndarray:
        return self.factors.full()

    def with_factors(self, core, u1, u2, u3, **kw) -> "TuckerState":
        return replace(self, factors=TuckerFactors(core, u1, u2, u3), **kw)


def check_ranks(ranks, shape=None):
    r1, r2, r3 = (int(r) for r in ranks)
    if min(r1, r2, r3) < 1:
        raise ValueError(f"ranks must be positive, got {ranks}")
    if r1 > r2 * r3 or r2 > r1 * r3 or r3 > r1 * r2:
        raise ValueError(f"ranks {ranks} are not a feasible Tucker rank")
    if shape is not None and any(r > n for r, n in zip((r1, r2, r3), shape)):
        raise ValueError(f"ranks {ranks} exceed tensor shape {tuple(shape)}")
    return (r1, r2, r3)


def init(x, ranks, attention: AttentionSpec, user_map: IdMap | None = None,
         item_map: IdMap | None = None, seed: int = 0, max_iters: int = 50,
         tol: float = 1e-6) -> TuckerState:
    """HOOI factors of the attention-weighted tensor ``x``."""
    ranks = check_ranks(ranks, x.shape)
    if x.shape[2] != attention.L:
        raise ValueError("tensor position extent differs from the attention window")
    res = hooi(x, ranks, max_iters=max_iters, tol=tol, seed=seed)
    user_map = IdMap(range(x.shape[0])) if user_map is None else user_map.copy()
    item_map = IdMap(range(x.shape[1])) if item_map is None else item_map.copy()
    return TuckerState(res.factors, user_map, item_map, attention)


def ti_update(state: TuckerState, delta) -> TuckerState:
    """Tucker-integrator step absorbing ``delta`` over known users and items."""
    if tuple(delta.shape) != state.shape:
        raise ValueError(f"delta shape {tuple(delta.shape)} != model shape {state.shape}")
    ranks = state.ranks
    core = state.factors.core
    factors = list(state.factors.factors)
    for mode in (1, 2, 3):
        q, s_t = thin_qr(unfold(core, mode).T)
        # factors[< mode] are already updated, factors[> mode] are still the old ones
        dv = project_others(delta, factors, mode) @ q
        u_new, s_new = thin_qr(factors[mode - 1] @ s_t.T + dv)
        s_new = s_new - u_new.T @ dv
        core = fold(s_new @ q.T, mode, ranks)
        factors[mode - 1] = u_new
    core = core + project_all(delta, factors)
    return state.with_factors(core, *factors)


def _dense(x):
    return x.todense() if isinstance(x, SparseCoo) else np.asarray(x, dtype=np.float64)


def add_block(state: TuckerState, delta, new_users=None, new_items=None) -> TuckerState:
    """Merge the ``new users x new items x L`` block into the model."""
    k_users, k_items, L = delta.shape
    m, n, _ = state.shape
    new_users = list(range(m, m + k_users)) if new_users is None else list(new_users)
    new_items = list(range(n, n + k_items)) if new_items is None else list(new_items)
    if L != state.attention.L or (len(new_users), len(new_items)) != (k_users, k_items):
        raise ValueError("block delta does not match the new ids or the window length")
    if any(x in state.user_map for x in new_users) or any(x in state.item_map for x in new_items):
        raise ValueError("block merge only accepts entities unknown to the model")
    if k_users == 0 and k_items == 0:
        return state
    c0, u1, u2, u3 = state.factors
    r1, r2, r3 = state.ranks
    z = mode_product(_dense(delta), u3.T, 3)
    q1 = min(r1, k_users, k_items * r3)
    q2 = min(r2, k_items, k_users * r3)
    if q1 > 0 and q2 > 0:
        ud, vd, cd = tucker2(z, (q1, q2))
    else:
        q1 = q2 = 0
        ud, vd, cd = np.zeros((k_users, 0)), np.zeros((k_items, 0)), np.zeros((0, 0, r3))
    block = np.zeros((r1 + q1, r2 + q2, r3))
    block[:r1, :r2] = c0
    block[r1:, r2:] = cd
    merged = hosvd(block, (r1, r2, r3))
    user_map, item_map = state.user_map.copy(), state.item_map.copy()
    _register(user_map, new_users)
    _register(item_map, new_items)
    return TuckerState(
        TuckerFactors(
            merged.core,
            sla.block_diag(u1, ud) @ merged.u1,
            sla.block_diag(u2, vd) @ merged.u2,
            u3 @ merged.u3,
        ),
        user_map,
        item_map,
        state.attention,
    )


def add_mode_vectors(state: TuckerState, delta, mode, new_ids=None) -> TuckerState:
    """Incremental addition of new users (mode 1) or new items (mode 2).

    ``delta`` holds the new entities' attention-weighted slices over the
    known counterparts: ``k x N x L`` for users, ``M x k x L`` for items.
    Requires an SVD of the dense ``r_mode x (n_other * L)`` matrix, which
    dominates the cost for large catalogs.
    """
    mode = _MODE.get(mode)
    if mode is None:
        raise ValueError("mode must be 'users' (1) or 'items' (2)")
    shape = state.shape
    count = delta.shape[mode - 1]
    expected = list(shape)
    expected[mode - 1] = count
    if tuple(delta.shape) != tuple(expected):
        raise ValueError(f"delta of shape {tuple(delta.shape)} must span the known counterparts {tuple(expected)}")
    if new_ids is None:
        new_ids = range(shape[mode - 1], shape[mode - 1] + count)
    new_ids = list(new_ids)
    if len(new_ids) != count:
        raise ValueError("new_ids does not match the delta")
    if count == 0:
        return state
    core, u1, u2, u3 = state.factors
    factors = [u1, u2, u3]
    other = 2 if mode == 1 else 1
    kr = np.kron(u3, factors[other - 1])                  # (L * n_other) x (r3 * r_other)
    wide = unfold(core, mode) @ kr.T
    ut, st, vt = dense_svd(wide)
    u_hat = factors[mode - 1] @ ut
    a = _dense(unfold(delta, mode)).T
    r = state.ranks[mode - 1]
    v_bar, s_bar, u_bar = _append_columns(vt, np.diag(st), u_hat, a, r)
    new_core = fold(s_bar @ v_bar.T @ kr, mode, state.ranks)
    factors[mode - 1] = u_bar
    user_map, item_map = state.user_map.copy(), state.item_map.copy()
    _register(user_map if mode == 1 else item_map, new_ids)
    return TuckerState(TuckerFactors(new_core, *factors), user_map, item_map, state.attention)


def attach_embeddings(state: TuckerState, new_ids, mode, strategy: str = "zero",
                      sigma: float = 0.0, rng: np.random.Generator | None = None) -> TuckerState:
    """Zero or gaussian initial rows for new users or items (no data used)."""
    mode = _MODE.get(mode)
    if mode is None:
        raise ValueError("mode must be 'users' (1) or 'items' (2)")
    if strategy not in ("zero", "gaussian"):
        raise ValueError(f"unknown attachment strategy {strategy!r}")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    new_ids = list(new_ids)
    if not new_ids:
        return state
    core, u1, u2, u3 = state.factors
    factors = [u1, u2, u3]
    r = state.ranks[mode - 1]
    if strategy == "zero":
        extra = np.zeros((len(new_ids), r))
    else:
        rng = np.random.default_rng() if rng is None else rng
        extra = rng.normal(0.0, sigma, size=(len(new_ids), r))
    stacked = np.vstack([factors[mode - 1], extra])
    if strategy == "gaussian":
        stacked, r_fac = thin_qr(stacked)
        core = mode_product(core, r_fac, mode)
    factors[mode - 1] = stacked
    user_map, item_map = state.user_map.copy(), state.item_map.copy()
    _register(user_map if mode == 1 else item_map, new_ids)
    return TuckerState(TuckerFactors(core, *factors), user_map, item_map, state.attention)


def shift_matrix(L: int) -> np.ndarray:
    """Lower shift: ``S[k, k'] = 1`` iff ``k == k' + 1``."""
    return np.eye(L, k=-1)


def position_weights(state: TuckerState) -> np.ndarray:
    """The length-L vector ``S A W w_L`` that a user's window matrix is multiplied by."""
    spec = state.attention
    w = state.factors.u3
    w_hat = (spec.inverse_transpose() @ w)[spec.L - 1]
    return shift_matrix(spec.L) @ spec.matrix() @ w @ w_hat


def window_matrix(window, n_items: int, L: int) -> np.ndarray:
    """Binary ``N x L`` matrix of a user's window (oldest item first)."""
    p = np.zeros((n_items, L))
    for _, item, pos in window_entries(0, list(window), L):
        p[item, pos] = 1.0
    return p


def score(state: TuckerState, prefs) -> np.ndarray:
    n_items, L = state.shape[1], state.attention.L
    z = position_weights(state)
    if isinstance(prefs, np.ndarray) and prefs.ndim == 2:
        if prefs.shape != (n_items, L):
            raise ValueError(f"preference matrix must be {n_items} x {L}")
        pz = prefs @ z
    else:
        window = list(prefs)
        if len(window) > L:
            raise ValueError("window longer than L")
        pz = np.zeros(n_items)
        for _, item, pos in window_entries(0, window, L):
            pz[item] += z[pos]
    v = state.factors.u2
    return v @ (v.T @ pz)


def recommend(state: TuckerState, prefs, n: int, exclude_seen: bool = True, seen=None) -> np.ndarray:
    """Top-``n`` items for the user whose current window is ``prefs``.

    ``prefs`` is either the ``N x L`` window matrix or the window as a list of
    item indices (oldest first). With ``exclude_seen`` the items in ``seen``
    (by default the window's items) are filtered out.
    """
    scores = score(state, prefs)
    exclude = None
    if exclude_seen:
        if seen is None:
            if isinstance(prefs, np.ndarray) and prefs.ndim == 2:
                seen = np.flatnonzero(prefs.any(axis=1))
            else:
                seen = list(prefs)
        exclude = list(seen)
    return top_n(scores, n, exclude)
