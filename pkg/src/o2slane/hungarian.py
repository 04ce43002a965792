"""Minimum-cost rectangular assignment with a deterministic tie rule.

The core is the O(n^2 m) shortest-augmenting-path form of the Hungarian
method with row/column potentials.  On top of it, :func:`hungarian` walks the
rows in order and moves each row to the smallest column index that still
admits an optimal completion, so among all optimal assignments the one with
the lexicographically smallest column vector is returned.
"""
from __future__ import annotations

import numpy as np


def _solve_square_or_wide(cost: np.ndarray) -> np.ndarray:
    """Columns assigned to each row for an (n, m) matrix with n <= m."""
    n, m = cost.shape
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: row (1-based) matched to column j
    way = np.zeros(m + 1, dtype=np.int64)
    a = np.zeros((n + 1, m + 1))
    a[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, INF)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            if not np.isfinite(delta):
                raise ValueError("no feasible assignment (all remaining entries infinite)")
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    cols = np.empty(n, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            cols[p[j] - 1] = j - 1
    return cols


def _total(cost, cols):
    t = 0.0
    for i, c in enumerate(cols):
        t += cost[i, c]
    return t


def _lexicographic(cost: np.ndarray) -> np.ndarray:
    n, m = cost.shape
    cols = _solve_square_or_wide(cost)
    best = _total(cost, cols)
    finite = cost[np.isfinite(cost)]
    tol = 1e-12 * max(1.0, n * float(np.abs(finite).max()) if finite.size else 1.0)
    for i in range(n):
        fixed_cols = set(int(c) for c in cols[:i])
        rest_rows = np.arange(i + 1, n)
        prefix = _total(cost[:i], cols[:i])
        for c in range(int(cols[i])):
            if c in fixed_cols or not np.isfinite(cost[i, c]):
                continue
            avail = np.array([j for j in range(m) if j not in fixed_cols and j != c], dtype=np.int64)
            sub = cost[np.ix_(rest_rows, avail)]
            bound = prefix + cost[i, c] + (sub.min(axis=1).sum() if rest_rows.size else 0.0)
            if bound > best + tol:
                continue
            sub_cols = avail[_solve_square_or_wide(sub)] if rest_rows.size else np.empty(0, dtype=np.int64)
            trial = np.concatenate([cols[:i], [c], sub_cols])
            if _total(cost, trial) <= best + tol:
                cols = trial
                break
    return cols


def hungarian(cost) -> tuple[dict[int, int], float]:
    """Optimal one-to-one mapping of size ``min(n, m)``.

    Args:
        cost: (n, m) matrix.  ``inf`` marks forbidden pairs; everything else
            must be finite.

    Returns:
        ``(mapping, total)`` where ``mapping`` sends row index to column index.
        Ties are broken toward the lexicographically smallest index vector
        taken over the smaller side (columns per row when ``n <= m``, rows per
        column otherwise).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if np.isnan(cost).any() or np.isneginf(cost).any():
        raise ValueError("cost entries must be finite or +inf")
    n, m = cost.shape
    if n == 0 or m == 0:
        return {}, 0.0
    if n <= m:
        cols = _lexicographic(cost)
        mapping = {i: int(c) for i, c in enumerate(cols)}
    else:
        rows = _lexicographic(cost.T)
        mapping = {int(r): j for j, r in enumerate(rows)}
        mapping = dict(sorted(mapping.items()))
    total = 0.0
    for i, j in mapping.items():
        total += cost[i, j]
    return mapping, float(total)
