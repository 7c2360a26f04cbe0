import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyncf.linalg import SparseCoo, mode_product
from dyncf.seq_tensor import (
    AttentionSpec,
    EventLog,
    IdMap,
    UnknownEntityError,
    apply_attention,
    build_histories,
    build_matrix,
    build_tensor,
    delta_matrix,
    delta_tensor,
    push_items,
    remap,
    restrict,
    window_entries,
)


def test_eventlog_sorts_stably():
    log = EventLog.from_records([("a", 1, 5.0), ("b", 2, 1.0), ("c", 3, 5.0), ("d", 4, 1.0)])
    assert log.users.tolist() == ["b", "d", "a", "c"]
    assert log[0] == ("b", 2, 1.0)
    assert len(log[1:3]) == 2


def test_eventlog_rejects_ragged_and_nan():
    with pytest.raises(ValueError):
        EventLog(["a"], [1, 2], [0.0])
    with pytest.raises(ValueError):
        EventLog(["a"], [1], [np.nan])


def test_idmap():
    m = IdMap(["x", "y"])
    assert m.add("x") == 0 and m.add("z") == 2
    assert m.index("y") == 1 and "z" in m and len(m) == 3
    with pytest.raises(UnknownEntityError):
        m.index("q")
    c = m.copy()
    c.add("w")
    assert len(m) == 3 and c != m


def test_attention_values():
    a = AttentionSpec(4, 2.0).matrix()
    np.testing.assert_allclose(np.diag(a), 1.0)
    np.testing.assert_allclose(np.diag(a, -1), 0.25)
    np.testing.assert_allclose(np.diag(a, -3), 1 / 16)
    assert np.all(np.triu(a, 1) == 0)


def test_attention_f0_is_lower_ones():
    np.testing.assert_array_equal(AttentionSpec(3, 0).matrix(), np.tril(np.ones((3, 3))))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.floats(0, 6))
def test_inverse_transpose(L, f):
    spec = AttentionSpec(L, f)
    np.testing.assert_allclose(spec.inverse_transpose() @ spec.matrix().T, np.eye(L), atol=1e-9)


def test_attention_validation():
    with pytest.raises(ValueError):
        AttentionSpec(0)
    with pytest.raises(ValueError):
        AttentionSpec(3, -1.0)


def test_cached_attention_is_not_shared_mutable():
    spec = AttentionSpec(3, 1.0)
    a = spec.matrix()
    a[0, 0] = 99.0
    assert spec.matrix()[0, 0] == 1.0


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 6), max_size=6), st.lists(st.integers(0, 6), max_size=8), st.integers(1, 5))
def test_push_items_properties(window, new, L):
    window = list(dict.fromkeys(window))[-L:]
    out = push_items(window, new, L)
    assert len(out) == len(set(out)) <= L
    if new:
        assert out[-1] == new[-1]
    # no item that appears only in the old window can overtake a new one
    for item in set(new) & set(out):
        assert all(out.index(item) > out.index(o) for o in out if o not in new)


def test_window_positions_right_aligned():
    assert window_entries(0, [7, 8], 4) == [(0, 7, 2), (0, 8, 3)]


def test_build_histories_and_tensor():
    log = EventLog.from_records([("u", "a", 1), ("u", "b", 2), ("u", "a", 3), ("v", "c", 4)])
    hist = build_histories(log, 3)
    assert [h.items for h in hist] == [[1, 0], [2]]
    x = build_tensor(hist, 3, (2, 3)).todense()
    assert x[0, 1, 1] == 1 and x[0, 0, 2] == 1 and x[1, 2, 2] == 1 and x.sum() == 3


def test_build_tensor_rejects_long_window():
    with pytest.raises(ValueError):
        build_tensor({0: [1, 2, 3]}, 2, (1, 4))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.sampled_from([0.0, 1.0, 2.5]))
def test_apply_attention_matches_mode_product(seed, L, f):
    rng = np.random.default_rng(seed)
    d = (rng.random((3, 4, L)) < 0.3).astype(float)
    a = AttentionSpec(L, f).matrix()
    got = apply_attention(SparseCoo.from_dense(d), a).todense()
    np.testing.assert_allclose(got, mode_product(d, a.T, 3), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.sampled_from([0.0, 2.0]))
def test_delta_tensor_is_exact_difference(seed, L, f):
    rng = np.random.default_rng(seed)
    m, n = 4, 6
    spec = AttentionSpec(L, f)
    windows = {u: push_items([], rng.integers(0, n, size=rng.integers(0, 7)).tolist(), L) for u in range(m)}
    events = [(int(rng.integers(m)), int(rng.integers(n))) for _ in range(rng.integers(1, 6))]
    old = apply_attention(build_tensor(windows, L, (m, n)), spec.matrix())
    delta, new_windows = delta_tensor(windows, events, spec, (m, n))
    merged = dict(windows)
    merged.update(new_windows)
    new = apply_attention(build_tensor(merged, L, (m, n)), spec.matrix())
    np.testing.assert_allclose((old + delta).todense(), new.todense(), atol=1e-12)


def test_delta_tensor_unknown_entity():
    with pytest.raises(UnknownEntityError):
        delta_tensor({}, [(5, 0)], AttentionSpec(2), (2, 2))


def test_delta_matrix_skips_seen():
    d = delta_matrix([(0, 1), (0, 1), (1, 0)], {(1, 0)}, (2, 2))
    np.testing.assert_array_equal(d.todense(), [[0, 1], [0, 0]])


def test_build_matrix_binary():
    np.testing.assert_array_equal(build_matrix([(0, 0), (0, 0)], (1, 2)).todense(), [[1, 0]])


def test_restrict_and_remap():
    x = SparseCoo((3, 2), [[0, 0], [1, 1], [2, 0]], [1.0, 2.0, 3.0])
    assert restrict(x, 1, [1, 2]).nnz == 2
    y = remap(x, 1, [2, 0])
    np.testing.assert_array_equal(y.todense(), [[3, 0], [1, 0]])
