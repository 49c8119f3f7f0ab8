"""Maximum-weight bipartite assignment (Kuhn-Munkres with potentials).

The solver maximizes the summed weight of a one-to-one partial assignment.
Pairs whose weight is not strictly positive never improve the total, so they
are omitted from the result; callers that want maximum cardinality should
shift their weights positive first.
"""

from __future__ import annotations

import math

from .errors import DomainError

_INF = float("inf")


def _solve_min_cost(cost: list[list[float]]) -> list[int]:
    """Min-cost perfect-on-rows assignment for an n x m matrix, n <= m.

    Classic O(n^2 m) potentials formulation. Returns col index per row.
    Ties in the augmenting scan resolve to the lowest column index.
    """
    n = len(cost)
    m = len(cost[0])
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)  # row (1-based) matched to column j; 0 = free
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [_INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = _INF
            j1 = -1
            row = cost[i0 - 1]
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    match = [-1] * n
    for j in range(1, m + 1):
        if p[j] != 0:
            match[p[j] - 1] = j - 1
    return match


def hungarian_max_weight(weights: list[list[float]]) -> list[tuple[int, int]]:
    """One-to-one partial assignment maximizing the summed weight.

    Rectangular matrices are handled by solving on the smaller side; rows or
    columns left unmatched (including every pair of non-positive weight) are
    omitted. Deterministic: ties resolve by the solver's ascending row and
    column scan. Non-finite weights are rejected.
    """
    n = len(weights)
    if n == 0 or any(len(r) == 0 for r in weights):
        raise DomainError("weight matrix must be at least 1x1")
    m = len(weights[0])
    if any(len(r) != m for r in weights):
        raise DomainError("weight matrix must be rectangular")
    for r in weights:
        for w in r:
            if not math.isfinite(w):
                raise DomainError("non-finite weight rejected")

    transposed = n > m
    mat = [list(r) for r in weights]
    if transposed:
        mat = [[mat[i][j] for i in range(n)] for j in range(m)]
        n, m = m, n

    # Negative entries can never be part of an optimum; clamp them so the
    # perfect-on-rows solution restricted to positive pairs is optimal.
    cost = [[-max(w, 0.0) for w in row] for row in mat]
    match = _solve_min_cost(cost)

    pairs = []
    for i, j in enumerate(match):
        if j >= 0 and mat[i][j] > 0.0:
            pairs.append((j, i) if transposed else (i, j))
    pairs.sort()
    return pairs


def assignment_total(weights: list[list[float]], pairs: list[tuple[int, int]]) -> float:
    return sum(weights[i][j] for i, j in pairs)
