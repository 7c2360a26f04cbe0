import numpy as np
import pytest

from dyncf.linalg import TuckerFactors


def orthonormal(rng, n, r):
    q, _ = np.linalg.qr(rng.normal(size=(n, r)))
    return q


def low_rank(rng, m, n, r, decay=1.0):
    s = np.geomspace(10.0, 10.0 * decay, r) if decay != 1.0 else rng.uniform(1.0, 10.0, r)
    return orthonormal(rng, m, r) @ np.diag(s) @ orthonormal(rng, n, r).T


def tucker_tensor(rng, shape, ranks):
    core = rng.normal(size=ranks)
    factors = [orthonormal(rng, n, r) for n, r in zip(shape, ranks)]
    return TuckerFactors(core, *factors).full()


def rank_r_pair(rng, m, n, r, max_cond=1e3):
    """Two exact rank-r matrices whose column and row spaces overlap well."""
    while True:
        u0, v0 = orthonormal(rng, m, r), orthonormal(rng, n, r)
        u1, _ = np.linalg.qr(u0 + 0.5 * rng.normal(size=(m, r)))
        v1, _ = np.linalg.qr(v0 + 0.5 * rng.normal(size=(n, r)))
        if max(np.linalg.cond(u0.T @ u1), np.linalg.cond(v0.T @ v1)) <= max_cond:
            x0 = u0 @ np.diag(rng.uniform(1, 5, r)) @ v0.T
            x1 = u1 @ np.diag(rng.uniform(1, 5, r)) @ v1.T
            return x0, x1


def tucker_pair(rng, shape, ranks, max_cond=1e3):
    """Two exact Tucker-rank tensors with well-conditioned factor overlaps."""
    while True:
        f0 = [orthonormal(rng, n, r) for n, r in zip(shape, ranks)]
        f1 = [np.linalg.qr(u + 0.5 * rng.normal(size=u.shape))[0] for u in f0]
        if max(np.linalg.cond(a.T @ b) for a, b in zip(f0, f1)) > max_cond:
            continue
        x0 = TuckerFactors(rng.normal(size=ranks), *f0).full()
        x1 = TuckerFactors(rng.normal(size=ranks), *f1).full()
        return x0, x1


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
