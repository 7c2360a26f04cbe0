import numpy as np


def top_n(scores, n: int, exclude=None) -> np.ndarray:
    """Indices of the ``n`` largest scores; ties go to the smaller index.

    ``exclude`` is an optional collection of indices that must not appear.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    scores = np.array(scores, dtype=np.float64)
    if exclude is not None and len(exclude):
        scores[np.asarray(list(exclude), dtype=np.int64)] = -np.inf
    # rank by descending score, breaking ties with the ascending index
    order = np.lexsort((np.arange(scores.size), -scores))
    if exclude is not None and len(exclude):
        order = order[np.isfinite(scores[order])]
    return order[:n]


def orthonormality_error(m) -> float:
    m = np.asarray(m)
    if m.shape[1] == 0:
        return 0.0
    return float(np.abs(m.T @ m - np.eye(m.shape[1])).max())
