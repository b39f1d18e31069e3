from math import ceil

import numpy as np

from .constants import Constants


def cross_entropy_rows(q: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """
    Per-node -ln q[n, y_n] over the masked nodes (natural log), with q clamped to [1e-12, 1].
    Returns one value per masked node, in ascending node order
    """

    rows = np.flatnonzero(mask) if mask.dtype == bool else np.asarray(mask)
    targets = labels[rows]
    if targets.size and (targets.min() < 0 or targets.max() >= q.shape[1]):
        raise ValueError(f"label out of range [0, {q.shape[1]}) on masked nodes: {np.unique(targets)}")

    return -np.log(np.clip(q[rows, targets], Constants.CE_CLAMP_MIN, 1.0))


def select_hard_set(lower_ce: np.ndarray, delta: float) -> np.ndarray:
    """
    Positions of the ceil(delta * N) largest entries of `lower_ce`, ties broken towards smaller positions.
    The result is sorted ascending
    """

    size = lower_ce.shape[0]
    if size == 0:
        return np.zeros(0, dtype=np.int64)

    count = min(size, max(1, ceil(delta * size - 1e-12)))
    # Stable sort on the negated losses keeps equal losses in index order
    order = np.argsort(-lower_ce, kind="stable")

    return np.sort(order[:count])
