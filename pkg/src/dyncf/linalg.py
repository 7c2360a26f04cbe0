"""Dense and sparse kernels shared by the matrix and tensor models.

Tensors are plain ``numpy.ndarray`` objects of order 3 (C layout, so
``t[i, j, k]`` addresses user ``i``, item ``j``, position ``k``). Sparse data
lives in :class:`SparseCoo`, which covers both matrices and order-3 tensors.

Unfoldings follow the cyclic convention of Kolda & Bader: the mode-n
unfolding maps entry ``(i1, i2, i3)`` to row ``i_n`` and to the column obtained
by enumerating the remaining indices with the earliest mode varying fastest::

    mode 1: column = i2 + n2 * i3
    mode 2: column = i1 + n1 * i3
    mode 3: column = i1 + n1 * i2

With this layout a Tucker tensor ``C x1 U1 x2 U2 x3 U3`` satisfies
``X_[1] = U1 C_[1] kron(U3, U2).T`` (and the analogous identities for the
other modes).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

# Below this size truncated_svd uses LAPACK directly.
DENSE_SVD_LIMIT = 500
OVERSAMPLING = 10
POWER_ITERATIONS = 2


class SparseCoo:
    """Coordinate-format sparse matrix or order-3 tensor.

    Duplicate coordinates are summed on construction and explicit zeros are
    dropped, so ``coords`` is always unique and ``values`` nonzero. Entries are
    kept in lexicographic coordinate order.
    """

    __slots__ = ("shape", "coords", "values")

    def __init__(self, shape, coords=None, values=None):
        shape = tuple(int(s) for s in shape)
        if len(shape) not in (2, 3):
            raise ValueError(f"SparseCoo supports order 2 or 3, got shape {shape}")
        if any(s < 0 for s in shape):
            raise ValueError(f"negative extent in shape {shape}")
        ndim = len(shape)
        if coords is None:
            coords = np.zeros((0, ndim), dtype=np.int64)
            values = np.zeros(0)
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, ndim)
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if coords.shape[0] != values.shape[0]:
            raise ValueError("coords and values differ in length")
        if not np.all(np.isfinite(values)):
            raise ValueError("SparseCoo values must be finite")
        if coords.size and (coords.min() < 0 or np.any(coords.max(axis=0) >= shape)):
            raise IndexError("SparseCoo index outside shape")
        if coords.shape[0]:
            flat = np.ravel_multi_index(tuple(coords.T), shape)
            uniq, inverse = np.unique(flat, return_inverse=True)
            summed = np.zeros(uniq.shape[0])
            np.add.at(summed, inverse, values)
            keep = summed != 0.0
            uniq, summed = uniq[keep], summed[keep]
            coords = np.stack(np.unravel_index(uniq, shape), axis=1).astype(np.int64)
            coords = coords.reshape(-1, ndim)
            values = summed
        self.shape = shape
        self.coords = coords
        self.values = values

    @classmethod
    def from_dense(cls, array) -> "SparseCoo":
        array = np.asarray(array, dtype=np.float64)
        idx = np.nonzero(array)
        return cls(array.shape, np.stack(idx, axis=1), array[idx])

    @classmethod
    def from_scipy(cls, matrix) -> "SparseCoo":
        coo = sp.coo_matrix(matrix)
        return cls(coo.shape, np.stack([coo.row, coo.col], axis=1), coo.data)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def todense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        if self.nnz:
            out[tuple(self.coords.T)] = self.values
        return out

    def tocsr(self) -> sp.csr_matrix:
        if self.ndim != 2:
            raise ValueError("tocsr needs a matrix; unfold tensors first")
        return sp.csr_matrix(
            (self.values, (self.coords[:, 0], self.coords[:, 1])), shape=self.shape
        )

    def transpose(self) -> "SparseCoo":
        if self.ndim != 2:
            raise ValueError("transpose is defined for matrices only")
        return SparseCoo(self.shape[::-1], self.coords[:, ::-1], self.values)

    @property
    def T(self) -> "SparseCoo":
        return self.transpose()

    def __add__(self, other: "SparseCoo") -> "SparseCoo":
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        return SparseCoo(
            self.shape,
            np.concatenate([self.coords, other.coords]),
            np.concatenate([self.values, other.values]),
        )

    def __neg__(self) -> "SparseCoo":
        return SparseCoo(self.shape, self.coords, -self.values)

    def __sub__(self, other: "SparseCoo") -> "SparseCoo":
        return self + (-other)

    def scale(self, alpha: float) -> "SparseCoo":
        return SparseCoo(self.shape, self.coords, alpha * self.values)

    def reshape_extent(self, shape) -> "SparseCoo":
        """Same entries inside a larger (or equal) bounding shape."""
        shape = tuple(int(s) for s in shape)
        if len(shape) != self.ndim or any(a > b for a, b in zip(self.shape, shape)):
            raise ValueError(f"cannot grow {self.shape} to {shape}")
        out = SparseCoo.__new__(SparseCoo)
        out.shape, out.coords, out.values = shape, self.coords, self.values
        return out

    def __repr__(self) -> str:
        return f"SparseCoo(shape={self.shape}, nnz={self.nnz})"


class TuckerFactors(NamedTuple):
    core: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray

    @property
    def factors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.u1, self.u2, self.u3)

    @property
    def ranks(self) -> tuple[int, int, int]:
        return tuple(self.core.shape)

    def full(self) -> np.ndarray:
        return tucker_to_tensor(self.core, self.factors)


@dataclass
class HooiResult:
    factors: TuckerFactors
    sweeps: int
    errors: list


def _check_finite(m: np.ndarray, what: str = "input"):
    if not np.all(np.isfinite(m)):
        raise ValueError(f"non-finite values in {what}")


def _check_mode(mode: int):
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")


def _other_modes(mode: int) -> tuple[int, int]:
    # Kolda order: the earlier remaining mode varies fastest.
    return {1: (2, 3), 2: (1, 3), 3: (1, 2)}[mode]


def thin_qr(m) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR with a non-negative diagonal in ``r``."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("thin_qr expects a matrix")
    if m.shape[0] < m.shape[1]:
        raise ValueError(f"thin_qr needs rows >= cols, got {m.shape}")
    _check_finite(m)
    q, r = np.linalg.qr(m, mode="reduced")
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs, r * signs[:, None]


def _sign_fix(u: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flip singular pairs so the first nonzero entry of each left vector is positive."""
    if u.size == 0:
        return u, vt
    nz = np.abs(u) > 1e-14 * max(1.0, np.abs(u).max())
    first = np.argmax(nz, axis=0)
    lead = u[first, np.arange(u.shape[1])]
    signs = np.where(lead < 0, -1.0, 1.0)
    return u * signs, vt * signs[:, None]


def dense_svd(m):
    """Thin SVD with the package sign convention; returns ``(u, s, v)``."""
    m = np.asarray(m, dtype=np.float64)
    _check_finite(m)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    u, vt = _sign_fix(u, vt)
    return u, s, vt.T


def _randomized_svd(a, r: int, seed: int):
    rng = np.random.default_rng(seed)
    rows, cols = a.shape
    k = min(r + OVERSAMPLING, rows, cols)
    omega = rng.standard_normal((cols, k))
    y = a @ omega
    q, _ = np.linalg.qr(y)
    for _ in range(POWER_ITERATIONS):
        z, _ = np.linalg.qr(a.T @ q)
        q, _ = np.linalg.qr(a @ z)
    b = np.asarray((a.T @ q).T)
    ub, s, vt = np.linalg.svd(b, full_matrices=False)
    u = q @ ub
    return u[:, :r], s[:r], vt[:r]


def truncated_svd(m, r: int, seed: int = 0):
    """Rank-``r`` SVD of a dense array, scipy sparse matrix or :class:`SparseCoo`.

    Matrices with both sides under ``DENSE_SVD_LIMIT`` go through LAPACK;
    larger ones through a seeded randomized range finder (oversampling 10,
    two power iterations). Returns ``(u, s, v)`` with ``s`` one-dimensional.
    """
    if isinstance(m, SparseCoo):
        m = m.tocsr()
    rows, cols = m.shape
    if r < 0 or r > min(rows, cols):
        raise ValueError(f"rank {r} exceeds matrix dimensions {m.shape}")
    if max(rows, cols) < DENSE_SVD_LIMIT or r + OVERSAMPLING >= min(rows, cols):
        dense = m.toarray() if sp.issparse(m) else np.asarray(m, dtype=np.float64)
        u, s, v = dense_svd(dense)
        return u[:, :r], s[:r], v[:, :r]
    if not sp.issparse(m):
        m = np.asarray(m, dtype=np.float64)
        _check_finite(m)
    u, s, vt = _randomized_svd(m, r, seed)
    u, vt = _sign_fix(u, vt)
    return u, s, vt.T


# ---------------------------------------------------------------- tensors


def unfold(t, mode: int):
    """Mode-``mode`` unfolding (1-based mode) in the cyclic column order."""
    _check_mode(mode)
    if isinstance(t, SparseCoo):
        if t.ndim != 3:
            raise ValueError("unfold expects an order-3 tensor")
        a, b = _other_modes(mode)
        c = t.coords
        col = c[:, a - 1] + t.shape[a - 1] * c[:, b - 1]
        return SparseCoo(
            (t.shape[mode - 1], t.shape[a - 1] * t.shape[b - 1]),
            np.stack([c[:, mode - 1], col], axis=1),
            t.values,
        )
    t = np.asarray(t)
    if t.ndim != 3:
        raise ValueError("unfold expects an order-3 tensor")
    return np.reshape(np.moveaxis(t, mode - 1, 0), (t.shape[mode - 1], -1), order="F")


def fold(m, mode: int, shape):
    """Inverse of :func:`unfold` for a dense matrix."""
    _check_mode(mode)
    shape = tuple(shape)
    m = np.asarray(m)
    moved = (shape[mode - 1],) + tuple(s for i, s in enumerate(shape) if i != mode - 1)
    if m.shape != (moved[0], moved[1] * moved[2]):
        raise ValueError(f"matrix of shape {m.shape} cannot fold into {shape}")
    return np.moveaxis(np.reshape(m, moved, order="F"), 0, mode - 1)


def mode_product(t, m, mode: int) -> np.ndarray:
    """``t x_mode m``: multiplies every mode-``mode`` fiber of ``t`` by ``m``."""
    _check_mode(mode)
    m = np.asarray(m, dtype=np.float64)
    if isinstance(t, SparseCoo):
        t_unf = unfold(t, mode).tocsr()
        shape = list(t.shape)
        if m.shape[1] != shape[mode - 1]:
            raise ValueError(f"matrix {m.shape} does not match extent {shape[mode - 1]}")
        shape[mode - 1] = m.shape[0]
        return fold(np.asarray((t_unf.T @ m.T).T), mode, shape)
    t = np.asarray(t, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != t.shape[mode - 1]:
        raise ValueError(f"matrix {m.shape} does not match extent {t.shape[mode - 1]}")
    out = np.tensordot(m, t, axes=(1, mode - 1))
    return np.moveaxis(out, 0, mode - 1)


def tucker_to_tensor(core, factors: Sequence[np.ndarray]) -> np.ndarray:
    out = core
    for mode, u in enumerate(factors, start=1):
        out = mode_product(out, u, mode)
    return out


def project_others(t, factors: Sequence[np.ndarray], mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding of ``t`` multiplied by the transposed factors of the other modes.

    Returns the dense ``n_mode x (r_a * r_b)`` matrix ``t_[mode] kron(U_b, U_a)``
    where ``(a, b)`` are the remaining modes in cyclic order. Sparse input is
    contracted entry by entry so the Kronecker product is never formed.
    """
    _check_mode(mode)
    a, b = _other_modes(mode)
    ua, ub = factors[a - 1], factors[b - 1]
    if isinstance(t, SparseCoo):
        return _project_sparse(t, ua, ub, mode, a, b)
    t = np.asarray(t, dtype=np.float64)
    y = mode_product(mode_product(t, ua.T, a), ub.T, b)
    return unfold(y, mode)


def _project_sparse(t: SparseCoo, ua, ub, mode: int, a: int, b: int) -> np.ndarray:
    # contract the sparse tensor with one factor first (the cheaper choice),
    # then the dense intermediate with the other; the Kronecker product is never formed
    n = t.shape[mode - 1]
    ra, rb = ua.shape[1], ub.shape[1]
    if t.nnz == 0:
        return np.zeros((n, ra * rb))
    c = t.coords
    size = t.shape[0] * t.shape[1] * t.shape[2]
    first, second = (a, b) if size / t.shape[a - 1] * ra <= size / t.shape[b - 1] * rb else (b, a)
    uf, us = (ua, ub) if first == a else (ub, ua)
    n_s = t.shape[second - 1]
    cols = c[:, second - 1] * n + c[:, mode - 1]
    mat = sp.csr_matrix((t.values, (c[:, first - 1], cols)), shape=(t.shape[first - 1], n_s * n))
    w = np.asarray(mat.T @ uf).reshape(n_s, n, uf.shape[1])      # [i_second, i_mode, j_first]
    y = np.tensordot(w, us, axes=(0, 0))                          # [i_mode, j_first, j_second]
    if first == a:
        y = y.transpose(0, 2, 1)                                  # -> [i_mode, j_b, j_a]
    return np.ascontiguousarray(y).reshape(n, rb * ra)


def project_all(t, factors: Sequence[np.ndarray]) -> np.ndarray:
    """``t x1 U1^T x2 U2^T x3 U3^T`` for dense or sparse ``t``."""
    y1 = project_others(t, factors, 1)
    shape = (factors[0].shape[1], factors[1].shape[1], factors[2].shape[1])
    return fold(factors[0].T @ y1, 1, shape)


def frob_norm(t) -> float:
    if isinstance(t, SparseCoo):
        return float(np.linalg.norm(t.values))
    return float(np.linalg.norm(np.asarray(t)))


def _leading_left(m, r: int, seed: int = 0) -> np.ndarray:
    rows, cols = m.shape
    if r > rows:
        raise ValueError(f"rank {r} exceeds extent {rows}")
    if r <= min(rows, cols):
        return truncated_svd(m, r, seed)[0]
    # more vectors requested than the unfolding has columns: complete the basis
    dense = m.toarray() if sp.issparse(m) else np.asarray(m, dtype=np.float64)
    u = np.linalg.svd(dense, full_matrices=True)[0][:, :r]
    return _sign_fix(u, np.zeros((r, 0)))[0]


def _check_ranks(shape, ranks):
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != 3:
        raise ValueError("ranks must be a triple")
    for n, r in zip(shape, ranks):
        if r < 1 or r > n:
            raise ValueError(f"ranks {ranks} do not fit tensor shape {tuple(shape)}")
    return ranks


def hosvd(t, ranks, seed: int = 0) -> TuckerFactors:
    """Truncated higher-order SVD."""
    ranks = _check_ranks(t.shape, ranks)
    factors = []
    for mode in (1, 2, 3):
        factors.append(_leading_left(_as_matrix(unfold(t, mode)), ranks[mode - 1], seed))
    core = project_all(t, factors)
    return TuckerFactors(core, *factors)


def _fit_error(norm_t: float, core: np.ndarray) -> float:
    # orthonormal factors: ||t - C x U||^2 = ||t||^2 - ||C||^2
    if norm_t == 0:
        return 0.0
    resid = max(norm_t**2 - float(np.sum(core**2)), 0.0)
    return float(np.sqrt(resid) / norm_t)


def hooi(t, ranks, init: TuckerFactors | None = None, max_iters: int = 50,
         tol: float = 1e-6, seed: int = 0, update_modes=(1, 2, 3)) -> HooiResult:
    """Higher-order orthogonal iteration.

    Starts from ``init`` when given, otherwise from :func:`hosvd`. A sweep
    refreshes the factors of ``update_modes`` in turn; iteration stops once
    the relative fit error improves by less than ``tol`` or after
    ``max_iters`` sweeps. ``errors`` holds the relative fit error of the
    start point followed by one value per sweep.
    """
    ranks = _check_ranks(t.shape, ranks)
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if init is None:
        init = hosvd(t, ranks, seed)
    factors = [np.array(u, dtype=np.float64) for u in init.factors]
    for mode, u in enumerate(factors, start=1):
        if u.shape != (t.shape[mode - 1], ranks[mode - 1]):
            raise ValueError(f"init factor {mode} has shape {u.shape}")
    norm_t = frob_norm(t)
    core = project_all(t, factors)
    errors = [_fit_error(norm_t, core)]
    sweeps = 0
    for sweeps in range(1, max_iters + 1):
        for mode in update_modes:
            y = project_others(t, factors, mode)
            factors[mode - 1] = _leading_left(y, ranks[mode - 1], seed)
        last = update_modes[-1]
        core = fold(factors[last - 1].T @ y, last, ranks)
        errors.append(_fit_error(norm_t, core))
        if errors[-2] - errors[-1] < tol:
            break
    return HooiResult(TuckerFactors(core, *factors), sweeps, errors)


def tucker2(t, ranks, max_iters: int = 50, tol: float = 1e-12):
    """Compress modes 1 and 2 of ``t``; mode 3 keeps its full extent.

    Returns ``(u, v, core)`` with ``t ~= core x1 u x2 v``.
    """
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != 2:
        raise ValueError("tucker2 takes two ranks")
    full = _check_ranks(t.shape, (ranks[0], ranks[1], t.shape[2]))
    u = _leading_left(_as_matrix(unfold(t, 1)), full[0])
    v = _leading_left(_as_matrix(unfold(t, 2)), full[1])
    init = TuckerFactors(None, u, v, np.eye(t.shape[2]))
    res = hooi(t, full, init=init, max_iters=max_iters, tol=tol, update_modes=(1, 2))
    return res.factors.u1, res.factors.u2, res.factors.core


def _as_matrix(m):
    return m.tocsr() if isinstance(m, SparseCoo) else m
