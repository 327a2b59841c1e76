"""Exact minimum-cost linear assignment on square cost matrices."""

import itertools

import numpy as np

# Sentinel cost for padding / forbidden entries. Kept finite so all
# arithmetic stays well-defined; it only needs to dominate any real cost.
BIG = 1e10

# Factorial enumeration cap for the brute-force oracle.
_BRUTE_FORCE_MAX_N = 9


def _validate_square(cost) -> np.ndarray:
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {c.shape}")
    if c.shape[0] < 1:
        raise ValueError("cost matrix must have at least one row")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix entries must be finite")
    if np.any(c < 0):
        raise ValueError("cost matrix entries must be non-negative")
    return c


def solve(cost) -> tuple[np.ndarray, float]:
    """Solve the min-cost assignment problem on a square cost matrix.

    Shortest-augmenting-path method with dual potentials, O(n^3). Exact for
    arbitrary finite real costs and deterministic: ties are always broken by
    the first minimum encountered.

    Args:
        cost: n x n array of finite, non-negative costs.

    Returns:
        (assign, total_cost) where assign[i] is the column matched to row i
        and total_cost = sum_i cost[i, assign[i]] is globally minimal.
    """
    c = _validate_square(cost)
    n = c.shape[0]

    # 1-based columns; column 0 is the virtual root of each augmenting search.
    u = np.zeros(n + 1)  # row potentials, indexed by row+1
    v = np.zeros(n + 1)  # column potentials
    col_row = np.zeros(n + 1, dtype=np.intp)  # row+1 matched to each column, 0 = free
    prev_col = np.zeros(n + 1, dtype=np.intp)  # predecessor column on the alternating path

    for i in range(1, n + 1):
        col_row[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)  # cheapest reduced cost seen per column
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_row[j0]
            free = ~used
            free[0] = False
            idx = np.flatnonzero(free)
            cur = c[i0 - 1, idx - 1] - u[i0] - v[idx]
            better = cur < minv[idx]
            upd = idx[better]
            minv[upd] = cur[better]
            prev_col[upd] = j0
            k = int(np.argmin(minv[idx]))
            j1 = int(idx[k])
            delta = minv[j1]
            # Dual update keeps all explored edges tight and the rest feasible.
            used_rows = col_row[used]
            u[used_rows] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if col_row[j0] == 0:
                break
        # Augment along the path back to the virtual column.
        while j0 != 0:
            j1 = prev_col[j0]
            col_row[j0] = col_row[j1]
            j0 = j1

    assign = np.empty(n, dtype=np.intp)
    for j in range(1, n + 1):
        assign[col_row[j] - 1] = j - 1
    total = float(c[np.arange(n), assign].sum())
    return assign, total


def brute_force(cost) -> tuple[np.ndarray, float]:
    """Exhaustive assignment oracle: enumerates all n! permutations.

    Ties are broken by the lexicographically smallest assignment array.
    Limited to n <= 9.
    """
    c = _validate_square(cost)
    n = c.shape[0]
    if n > _BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force enumeration capped at n={_BRUTE_FORCE_MAX_N}, got {n}")
    rows = np.arange(n)
    best_assign = None
    best_total = np.inf
    # itertools yields permutations in lexicographic order, so keeping the
    # first strict improvement implements the tie-break.
    for perm in itertools.permutations(range(n)):
        total = c[rows, perm].sum()
        if total < best_total:
            best_total = total
            best_assign = perm
    return np.array(best_assign, dtype=np.intp), float(best_total)
