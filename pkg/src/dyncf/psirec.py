"""Low-rank matrix model updated by the projector-splitting integrator.

The state keeps ``X ~= U S V^T`` with orthonormal ``U`` (users) and ``V``
(items). ``S`` is a dense ``r x r`` matrix: integrator steps leave it
non-diagonal, and :func:`rediagonalize` restores the SVD form on request.
Every operation returns a new state; inputs are never modified.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .linalg import SparseCoo, dense_svd, thin_qr, truncated_svd
from .ranking import top_n
from .seq_tensor import IdMap, UnknownEntityError

USERS, ITEMS = "users", "items"


@dataclass
class SvdState:
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    user_map: IdMap = field(default_factory=IdMap)
    item_map: IdMap = field(default_factory=IdMap)

    def __post_init__(self):
        r = self.s.shape[0]
        if self.s.shape != (r, r) or self.u.shape[1] != r or self.v.shape[1] != r:
            raise ValueError("factor shapes are inconsistent with the core")
        if len(self.user_map) != self.u.shape[0] or len(self.item_map) != self.v.shape[0]:
            raise ValueError("id maps do not match factor row counts")

    @property
    def rank(self) -> int:
        return self.s.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.u.shape[0], self.v.shape[0])

    def reconstruct(self) -> np.ndarray:
        return self.u @ self.s @ self.v.T


def _default_maps(shape, user_map, item_map):
    user_map = IdMap(range(shape[0])) if user_map is None else user_map.copy()
    item_map = IdMap(range(shape[1])) if item_map is None else item_map.copy()
    if (len(user_map), len(item_map)) != tuple(shape):
        raise ValueError("id maps do not match the matrix shape")
    return user_map, item_map


def _as_dense_or_csr(x):
    if isinstance(x, SparseCoo):
        return x.tocsr()
    return np.asarray(x, dtype=np.float64)


def init(matrix, r: int, user_map: IdMap | None = None, item_map: IdMap | None = None,
         seed: int = 0) -> SvdState:
    """Rank-``r`` truncated SVD of the interaction matrix."""
    shape = matrix.shape
    if r < 1 or r > min(shape):
        raise ValueError(f"rank {r} exceeds matrix dimensions {shape}")
    u, s, v = truncated_svd(matrix, r, seed=seed)
    user_map, item_map = _default_maps(shape, user_map, item_map)
    return SvdState(u, np.diag(s), v, user_map, item_map)


def psi_update(state: SvdState, delta) -> SvdState:
    """One projector-splitting step absorbing ``delta`` over known users and items."""
    if tuple(delta.shape) != state.shape:
        raise ValueError(f"delta shape {tuple(delta.shape)} != model shape {state.shape}")
    d = _as_dense_or_csr(delta)
    u0, s0, v0 = state.u, state.s, state.v
    dv = np.asarray(d @ v0)
    u1, s_hat = thin_qr(u0 @ s0 + dv)
    left = v0 @ (s_hat - u1.T @ dv).T + np.asarray(d.T @ u1)
    v1, s1_t = thin_qr(left)
    return replace(state, u=u1, s=s1_t.T, v=v1)


def _extend_basis(u0, a):
    """Orthonormal ``J`` spanning the part of ``a`` outside ``range(u0)``, with ``K = J^T a``.

    The QR is taken jointly on ``[u0, a]`` so that ``J`` stays orthogonal to
    ``u0`` even when the residual is (numerically) zero.
    """
    m, r = u0.shape
    k = a.shape[1]
    p = min(k, m - r)
    if p <= 0:
        return np.zeros((m, 0)), np.zeros((0, k))
    q, rr = np.linalg.qr(np.hstack([u0, a]), mode="complete" if m < r + k else "reduced")
    return q[:, r:r + p], rr[r:r + p, r:]


def _append_columns(u0, s0, v0, a, r):
    """Incremental SVD for new columns ``a`` of ``u0 s0 v0^T``, truncated to rank ``r``."""
    y = u0.T @ a
    j, k = _extend_basis(u0, a - u0 @ y)
    p = j.shape[1]
    n_new = a.shape[1]
    middle = np.block([[s0, y], [np.zeros((p, s0.shape[1])), k]])
    um, sm, vm = dense_svd(middle)
    u1 = np.hstack([u0, j]) @ um[:, :r]
    v1 = sla.block_diag(v0, np.eye(n_new)) @ vm[:, :r]
    return u1, np.diag(sm[:r]), v1


def add_rows_or_cols(state: SvdState, delta, axis: str, new_ids=None) -> SvdState:
    """Append new users (``axis="users"``) or items (``axis="items"``).

    ``delta`` is given in the usual user x item orientation: ``k x N`` for
    ``k`` new users over the known items, or ``M x k`` for new items over
    the known users. The enlarged factorization is truncated back to the
    state's rank.
    """
    if axis not in (USERS, ITEMS):
        raise ValueError(f"axis must be 'users' or 'items', got {axis!r}")
    m, n = state.shape
    count = delta.shape[0] if axis == USERS else delta.shape[1]
    expected = (count, n) if axis == USERS else (m, count)
    if tuple(delta.shape) != expected:
        raise UnknownEntityError(
            f"delta of shape {tuple(delta.shape)} must span the known {'items' if axis == USERS else 'users'}"
        )
    if new_ids is None:
        start = m if axis == USERS else n
        new_ids = range(start, start + count)
    new_ids = list(new_ids)
    if len(new_ids) != count:
        raise ValueError("new_ids does not match the delta")
    if count == 0:
        return state
    a = delta.todense() if isinstance(delta, SparseCoo) else np.asarray(delta, dtype=np.float64)
    r = state.rank
    user_map, item_map = state.user_map.copy(), state.item_map.copy()
    if axis == ITEMS:
        u1, s1, v1 = _append_columns(state.u, state.s, state.v, a, r)
        _register(item_map, new_ids)
    else:
        v1, s1_t, u1 = _append_columns(state.v, state.s.T, state.u, a.T, r)
        s1 = s1_t.T
        _register(user_map, new_ids)
    return SvdState(u1, s1, v1, user_map, item_map)


def _register(idmap: IdMap, new_ids):
    for ext in new_ids:
        if ext in idmap:
            raise ValueError(f"entity {ext!r} is already indexed")
        idmap.add(ext)


def add_block(state: SvdState, delta, new_users=None, new_items=None, seed: int = 0) -> SvdState:
    """Merge the interaction block of brand-new users with brand-new items."""
    k_users, k_items = delta.shape
    new_users = list(range(state.shape[0], state.shape[0] + k_users)) if new_users is None else list(new_users)
    new_items = list(range(state.shape[1], state.shape[1] + k_items)) if new_items is None else list(new_items)
    if (len(new_users), len(new_items)) != (k_users, k_items):
        raise ValueError("new id lists do not match the delta block")
    if any(x in state.user_map for x in new_users) or any(x in state.item_map for x in new_items):
        raise ValueError("block merge only accepts entities unknown to the model")
    if k_users == 0 and k_items == 0:
        return state
    r = state.rank
    q = min(r, k_users, k_items)
    if q > 0:
        ud, sd, vd = truncated_svd(delta, q, seed=seed)
    else:
        ud, sd, vd = np.zeros((k_users, 0)), np.zeros(0), np.zeros((k_items, 0))
    middle = sla.block_diag(state.s, np.diag(sd))
    um, sm, vm = dense_svd(middle)
    u3 = sla.block_diag(state.u, ud) @ um[:, :r]
    v3 = sla.block_diag(state.v, vd) @ vm[:, :r]
    user_map, item_map = state.user_map.copy(), state.item_map.copy()
    _register(user_map, new_users)
    _register(item_map, new_items)
    return SvdState(u3, np.diag(sm[:r]), v3, user_map, item_map)


def attach_embeddings(state: SvdState, new_ids, axis: str, strategy: str = "zero",
                      sigma: float = 0.0, rng: np.random.Generator | None = None) -> SvdState:
    """Give new users or items an initial embedding without touching the data.

    ``zero`` appends zero rows; ``gaussian`` appends ``N(0, sigma^2)`` rows and
    re-orthonormalizes the stacked factor with a QR, folding ``R`` into ``S``.
    """
    if axis not in (USERS, ITEMS):
        raise ValueError(f"axis must be 'users' or 'items', got {axis!r}")
    if strategy not in ("zero", "gaussian"):
        raise ValueError(f"unknown attachment strategy {strategy!r}")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    new_ids = list(new_ids)
    if not new_ids:
        return state
    user_map, item_map = state.user_map.copy(), state.item_map.copy()
    _register(user_map if axis == USERS else item_map, new_ids)
    factor = state.u if axis == USERS else state.v
    if strategy == "zero":
        extra = np.zeros((len(new_ids), state.rank))
    else:
        rng = np.random.default_rng() if rng is None else rng
        extra = rng.normal(0.0, sigma, size=(len(new_ids), state.rank))
    stacked = np.vstack([factor, extra])
    s = state.s
    if strategy == "gaussian":
        stacked, r_fac = thin_qr(stacked)
        s = r_fac @ s if axis == USERS else s @ r_fac.T
    if axis == USERS:
        return SvdState(stacked, s, state.v, user_map, item_map)
    return SvdState(state.u, s, stacked, user_map, item_map)


def rediagonalize(state: SvdState) -> SvdState:
    """Rotate the factors so that ``S`` is diagonal again."""
    us, ss, vs = dense_svd(state.s)
    return replace(state, u=state.u @ us, s=np.diag(ss), v=state.v @ vs)


def score(state: SvdState, prefs) -> np.ndarray:
    p = _prefs_vector(prefs, state.shape[1])
    return state.v @ (state.v.T @ p)


def recommend(state: SvdState, prefs, n: int, exclude_seen: bool = True, seen=None) -> np.ndarray:
    """Top-``n`` item indices for a user with binary preference vector ``prefs``.

    ``prefs`` is either a length-N vector or a sequence of consumed item
    indices. With ``exclude_seen`` the items in ``seen`` (default: the
    support of ``prefs``) are filtered out.
    """
    p = _prefs_vector(prefs, state.shape[1])
    scores = score(state, p)
    if not exclude_seen:
        return top_n(scores, n)
    return top_n(scores, n, np.flatnonzero(p) if seen is None else list(seen))


def _prefs_vector(prefs, n_items: int) -> np.ndarray:
    # float/bool arrays are indicator vectors; anything else lists item indices
    if isinstance(prefs, np.ndarray) and prefs.dtype.kind in "fb":
        if prefs.shape != (n_items,):
            raise ValueError(f"preference vector must have length {n_items}")
        return prefs.astype(np.float64)
    vec = np.zeros(n_items)
    idx = np.asarray(list(prefs), dtype=np.int64)
    if idx.size:
        vec[idx] = 1.0
    return vec
