import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyncf import psirec
from dyncf.linalg import SparseCoo
from dyncf.ranking import orthonormality_error
from dyncf.seq_tensor import IdMap, UnknownEntityError

from conftest import low_rank, orthonormal, rank_r_pair, rel_err


def state_from(x, r):
    return psirec.init(x, r)


def assert_orthonormal(state, tol=1e-8):
    assert orthonormality_error(state.u) <= tol
    assert orthonormality_error(state.v) <= tol


# ------------------------------------------------------------------- init


def test_init_rank_one_exact():
    x = np.outer([1, 0, 1, 1], [0, 1, 1])
    s = psirec.init(x, 1)
    np.testing.assert_allclose(s.reconstruct(), x, atol=1e-12)


def test_init_full_rank_exact(rng):
    x = (rng.random((8, 5)) < 0.5).astype(float)
    s = psirec.init(x, 5)
    assert np.linalg.norm(s.reconstruct() - x) <= 1e-8


def test_init_sparse_matches_dense_oracle(rng):
    d = (rng.random((200, 100)) < 0.05).astype(float)
    s = psirec.init(SparseCoo.from_dense(d), 10)
    np.testing.assert_allclose(np.diag(s.s), np.linalg.svd(d, compute_uv=False)[:10], atol=1e-8)
    assert np.all(np.diff(np.diag(s.s)) <= 0)


def test_init_rank_overflow():
    with pytest.raises(ValueError):
        psirec.init(np.ones((3, 2)), 3)


# ------------------------------------------------------------------- PSI


def test_psi_zero_increment_preserves(rng):
    x = low_rank(rng, 12, 9, 3)
    s = state_from(x, 3)
    out = psirec.psi_update(s, np.zeros_like(x))
    np.testing.assert_allclose(out.reconstruct(), s.reconstruct(), atol=1e-10)


def test_psi_exact_on_rank_r_trajectory(rng):
    x0, x1 = rank_r_pair(rng, 30, 20, 4)
    out = psirec.psi_update(state_from(x0, 4), x1 - x0)
    assert rel_err(out.reconstruct(), x1) <= 1e-8
    assert_orthonormal(out)


def test_psi_small_perturbation_near_optimal(rng):
    x = low_rank(rng, 40, 30, 5)
    d = 1e-3 * rng.normal(size=x.shape)
    out = psirec.psi_update(state_from(x, 5), d)
    u, sv, vt = np.linalg.svd(x + d)
    best = np.linalg.norm(x + d - (u[:, :5] * sv[:5]) @ vt[:5])
    got = np.linalg.norm(out.reconstruct() - (x + d))
    assert got <= best + 10 * np.linalg.norm(d) ** 2 + 1e-12


def test_psi_forward_backward_reversible(rng):
    x0, x1 = rank_r_pair(rng, 25, 18, 3)
    s0 = state_from(x0, 3)
    back = psirec.psi_update(psirec.psi_update(s0, x1 - x0), x0 - x1)
    np.testing.assert_allclose(back.reconstruct(), x0, atol=1e-6)


def test_psi_accepts_sparse_delta(rng):
    x = low_rank(rng, 10, 8, 2)
    s = state_from(x, 2)
    d = np.zeros_like(x)
    d[1, 2] = 1.0
    a = psirec.psi_update(s, d)
    b = psirec.psi_update(s, SparseCoo.from_dense(d))
    np.testing.assert_allclose(a.reconstruct(), b.reconstruct(), atol=1e-12)


def test_psi_shape_mismatch(rng):
    s = state_from(low_rank(rng, 6, 5, 2), 2)
    with pytest.raises(ValueError):
        psirec.psi_update(s, np.zeros((5, 5)))


# ------------------------------------------------------------------- rows / cols


@pytest.mark.parametrize("axis", ["items", "users"])
def test_add_rows_or_cols_matches_dense_svd(rng, axis):
    x = rng.normal(size=(12, 7))
    s = state_from(x, 7)
    k = 3
    if axis == "items":
        new = rng.normal(size=(12, k))
        augmented = np.hstack([x, new])
    else:
        new = rng.normal(size=(k, 7))
        augmented = np.vstack([x, new])
    # the augmented SVD is exact before truncation, so the kept spectrum is the top of the oracle's
    out = psirec.add_rows_or_cols(s, new, axis)
    u, sv, vt = np.linalg.svd(augmented, full_matrices=False)
    np.testing.assert_allclose(np.diag(out.s), sv[:7], atol=1e-8)
    np.testing.assert_allclose(out.reconstruct(), (u[:, :7] * sv[:7]) @ vt[:7], atol=1e-8)
    assert_orthonormal(out)


def test_add_column_in_span_equals_direct_svd(rng):
    x = low_rank(rng, 10, 6, 3)
    s = state_from(x, 3)
    new = s.u @ rng.normal(size=(3, 2))
    out = psirec.add_rows_or_cols(s, new, "items")
    np.testing.assert_allclose(out.reconstruct(), np.hstack([x, new]), atol=1e-10)


def test_add_zero_column_keeps_matrix(rng):
    x = low_rank(rng, 8, 6, 2)
    s = state_from(x, 2)
    out = psirec.add_rows_or_cols(s, np.zeros((8, 1)), "items")
    np.testing.assert_allclose(out.reconstruct()[:, :6], x, atol=1e-10)
    assert out.rank == 2 and out.shape == (8, 7)


def test_add_rows_truncates_to_rank(rng):
    s = state_from(rng.normal(size=(10, 8)), 3)
    out = psirec.add_rows_or_cols(s, rng.normal(size=(4, 8)), "users", ["a", "b", "c", "d"])
    assert out.rank == 3 and out.shape == (14, 8)
    assert out.user_map.index("c") == 12
    assert_orthonormal(out)


def test_add_rows_wrong_counterpart_rejected(rng):
    s = state_from(rng.normal(size=(6, 5)), 2)
    with pytest.raises(UnknownEntityError):
        psirec.add_rows_or_cols(s, np.ones((2, 4)), "users")


def test_add_rows_empty_is_identity(rng):
    s = state_from(rng.normal(size=(6, 5)), 2)
    assert psirec.add_rows_or_cols(s, np.zeros((0, 5)), "users") is s


def test_add_rows_duplicate_id_rejected(rng):
    s = state_from(rng.normal(size=(6, 5)), 2)
    with pytest.raises(ValueError):
        psirec.add_rows_or_cols(s, np.ones((1, 5)), "users", [0])


# ------------------------------------------------------------------- block


def test_add_block_empty_unchanged(rng):
    s = state_from(rng.normal(size=(6, 5)), 2)
    assert psirec.add_block(s, np.zeros((0, 0))) is s


def test_add_block_single_entry_spectrum(rng):
    x = low_rank(rng, 7, 6, 3)
    s = state_from(x, 3)
    out = psirec.add_block(s, np.array([[1.0]]))
    expect = np.sort(np.concatenate([np.diag(s.s), [1.0]]))[::-1][:3]
    np.testing.assert_allclose(np.diag(out.s), expect, atol=1e-12)


def test_add_block_exact_when_ranks_cover(rng):
    x = low_rank(rng, 9, 7, 2)
    d = low_rank(rng, 3, 4, 2)
    out = psirec.add_block(state_from(x, 4), d)   # rank 4 covers both rank-2 blocks
    blk = np.block([[x, np.zeros((9, 4))], [np.zeros((3, 7)), d]])
    assert rel_err(out.reconstruct(), blk) <= 1e-8
    assert_orthonormal(out)


def test_add_block_known_ids_rejected(rng):
    s = state_from(rng.normal(size=(4, 4)), 2)
    with pytest.raises(ValueError):
        psirec.add_block(s, np.ones((1, 1)), new_users=[0], new_items=["new"])


# ------------------------------------------------------------------- attach


def test_attach_zero(rng):
    s = state_from(rng.normal(size=(6, 5)), 2)
    out = psirec.attach_embeddings(s, ["n1", "n2"], "users", "zero")
    np.testing.assert_array_equal(out.u[-2:], 0)
    np.testing.assert_array_equal(out.u.T @ out.u, s.u.T @ s.u)
    assert np.all(out.reconstruct()[-2:] == 0)


@pytest.mark.parametrize("axis", ["users", "items"])
def test_attach_gaussian_restores_orthonormality(rng, axis):
    s = state_from(rng.normal(size=(9, 7)), 3)
    out = psirec.attach_embeddings(s, ["x"], axis, "gaussian", 1e-5, np.random.default_rng(0))
    assert_orthonormal(out, 1e-10)
    # the known block of the matrix is unchanged by the re-orthonormalization
    rec = out.reconstruct()
    np.testing.assert_allclose(rec[:9, :7], s.reconstruct(), atol=1e-8)


def test_attach_gaussian_then_psi_gives_nontrivial_scores(rng):
    s = state_from((rng.random((10, 8)) < 0.4).astype(float), 3)
    s = psirec.attach_embeddings(s, ["new"], "users", "gaussian", 1e-5, np.random.default_rng(1))
    d = np.zeros(s.shape)
    d[-1, [1, 4]] = 1.0
    s = psirec.psi_update(s, d)
    assert np.abs(s.reconstruct()[-1]).max() > 1e-3


def test_attach_negative_sigma_rejected(rng):
    s = state_from(rng.normal(size=(4, 4)), 2)
    with pytest.raises(ValueError):
        psirec.attach_embeddings(s, ["a"], "users", "gaussian", -1.0)


def test_rediagonalize_keeps_product(rng):
    x0, x1 = rank_r_pair(rng, 12, 9, 3)
    s = psirec.psi_update(state_from(x0, 3), x1 - x0)
    d = psirec.rediagonalize(s)
    np.testing.assert_allclose(d.reconstruct(), s.reconstruct(), atol=1e-12)
    np.testing.assert_allclose(d.s, np.diag(np.diag(d.s)), atol=1e-12)


# ------------------------------------------------------------------- scoring


def test_recommend_zero_prefs_index_tiebreak(rng):
    s = state_from(rng.normal(size=(5, 6)), 2)
    assert psirec.recommend(s, [], 3).tolist() == [0, 1, 2]


def test_recommend_brute_force_oracle():
    # items 0 and 2 always co-occur; item 4 co-occurs with 0 once
    x = np.array([[1, 0, 1, 0, 0], [1, 0, 1, 0, 0], [1, 0, 1, 0, 1], [0, 1, 0, 1, 0], [0, 0, 1, 0, 0]], float)
    s = psirec.init(x, 1)
    ranked = psirec.recommend(s, [0], 2)
    v = s.v
    scores = v @ (v.T @ np.eye(5)[0])
    scores[0] = -np.inf
    assert ranked[0] == int(np.argmax(scores)) == 2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_recommend_excludes_seen(seed, n):
    rng = np.random.default_rng(seed)
    s = psirec.init(rng.normal(size=(6, 8)), 3)
    prefs = rng.random(8) < 0.4
    out = psirec.recommend(s, prefs.astype(float), n)
    assert not set(out.tolist()) & set(np.flatnonzero(prefs).tolist())
    assert len(out) == min(n, 8 - prefs.sum())


def test_operations_are_deterministic(rng):
    x = (rng.random((30, 20)) < 0.2).astype(float)
    a = psirec.init(x, 4, seed=3)
    b = psirec.init(x, 4, seed=3)
    d = np.zeros(x.shape)
    d[0, 0] = 1.0
    np.testing.assert_array_equal(psirec.psi_update(a, d).u, psirec.psi_update(b, d).u)


def test_state_validation():
    with pytest.raises(ValueError):
        psirec.SvdState(np.eye(3, 2), np.eye(2), np.eye(4, 2), IdMap(range(2)), IdMap(range(4)))
