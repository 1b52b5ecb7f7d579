"""Exact relative entropy and exact discrete Kantorovich transport.

The transport LP is solved by a network simplex on the bipartite transport
graph (a transportation simplex): north-west-corner initial basis, Bland's
rule for the entering cell, lowest-index tie break for the leaving cell.
This is exact up to floating-point arithmetic and produces a dual
certificate: at the returned plan and potential, complementary slackness
holds and the dual objective equals the primal value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .measures import (
    CostMatrix,
    DiscreteMeasure,
    LipschitzFunction,
    ValidationError,
    _require_same_point_set,
)

__all__ = ["TransportSolution", "relative_entropy", "transport_cost"]


def relative_entropy(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Kullback-Leibler divergence sum mu_i log(mu_i / nu_i).

    Returns +inf exactly when mu puts mass where nu does not; the 0 log 0
    terms contribute zero.
    """
    _require_same_point_set(mu, nu)
    supp = mu.support
    p = mu.weights[supp]
    q = nu.weights[supp]
    if np.any(q == 0):
        return math.inf
    return float(np.sum(p * np.log(p / q)))


@dataclass(frozen=True)
class TransportSolution:
    """Optimal Kantorovich value, plan, and dual potential.

    ``plan`` is indexed by the shared point set (rows: first marginal,
    columns: second). ``potential`` is a Lipschitz function g with
    value = sum g d(mu - gamma) and g(x) - g(y) = b*c(x,y) wherever the plan
    is positive; it is pinned to potential[0] = 0 (potentials are unique only
    up to an additive constant).
    """

    value: float
    plan: np.ndarray
    potential: LipschitzFunction

    def marginal_residual(self, mu: DiscreteMeasure, gamma: DiscreteMeasure) -> float:
        row = np.abs(self.plan.sum(axis=1) - mu.weights).max()
        col = np.abs(self.plan.sum(axis=0) - gamma.weights).max()
        return float(max(row, col))

    def complementary_slackness_residual(self, cost: CostMatrix) -> float:
        """Worst |g_i - g_j - b c_ij| over plan entries above 1e-12."""
        mask = self.plan > 1e-12
        if not mask.any():
            return 0.0
        g = self.potential.values
        gap = g[:, None] - g[None, :] - cost.scaled
        return float(np.abs(gap[mask]).max())


def transport_cost(mu: DiscreteMeasure, gamma: DiscreteMeasure, cost: CostMatrix) -> TransportSolution:
    """Exact optimal transport cost between measures on a shared point set."""
    _require_same_point_set(mu, gamma)
    n = mu.point_set.n
    if cost.n != n:
        raise ValidationError("cost matrix size does not match the point set")
    rows = mu.support
    cols = gamma.support
    scaled = cost.scaled
    sub = scaled[np.ix_(rows, cols)]
    flow, _, v, _ = transport_simplex(mu.weights[rows], gamma.weights[cols], sub)

    plan = np.zeros((n, n))
    plan[np.ix_(rows, cols)] = flow
    value = float((sub * flow).sum())

    # Column potential -v extends to the whole set by c-transform; this keeps
    # dual feasibility on all pairs (triangle inequality) and optimality.
    p_cols = -v
    full = (p_cols[None, :] + scaled[:, cols]).min(axis=1)
    full = full - full[0]
    potential = LipschitzFunction(full, cost)
    return TransportSolution(value=value, plan=plan, potential=potential)


# ---------------------------------------------------------------------------
# Transportation simplex


def transport_simplex(a: np.ndarray, b: np.ndarray, C: np.ndarray, max_pivots: int | None = None):
    """Solve min <C, X> over X >= 0 with row sums a and column sums b.

    ``a`` and ``b`` must be strictly positive with equal totals. Returns
    ``(X, u, v, basis)`` where (u, v) are optimal dual potentials with
    u_i + v_j <= C_ij everywhere and equality on the spanning-tree basis.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    m, n = C.shape
    if a.shape != (m,) or b.shape != (n,):
        raise ValidationError("marginal shapes do not match the cost matrix")
    if abs(a.sum() - b.sum()) > 1e-9 * (1.0 + a.sum()):
        raise ValidationError("marginals must have equal total mass")
    if max_pivots is None:
        max_pivots = 40 * (m + n) ** 2 + 1000

    X, basis = _northwest_corner(a, b)
    in_basis = np.zeros((m, n), dtype=bool)
    for i, j in basis:
        in_basis[i, j] = True

    eps = 1e-11 * (1.0 + float(np.abs(C).max(initial=0.0)))
    for _ in range(max_pivots):
        u, v = _potentials(basis, C, m, n)
        reduced = C - u[:, None] - v[None, :]
        reduced[in_basis] = 0.0
        # Bland's rule: first cell in row-major order with negative reduced cost.
        neg = np.argwhere(reduced < -eps)
        if neg.size == 0:
            return X, u, v, basis
        ei, ej = int(neg[0, 0]), int(neg[0, 1])
        cycle = _basis_cycle(basis, ei, ej, m, n)
        minus = cycle[1::2]
        theta = min(X[i, j] for i, j in minus)
        # Leaving cell: smallest (i, j) among the minus cells attaining theta.
        leave = min((i, j) for i, j in minus if X[i, j] <= theta)
        for k, (i, j) in enumerate(cycle):
            if k % 2 == 0:
                X[i, j] += theta
            else:
                X[i, j] -= theta
        X[leave] = 0.0
        basis.remove(leave)
        in_basis[leave] = False
        basis.append((ei, ej))
        in_basis[ei, ej] = True
    raise RuntimeError("transport simplex failed to terminate (pivot limit reached)")


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    """Initial basic feasible solution with exactly m + n - 1 basic cells."""
    m, n = a.size, b.size
    X = np.zeros((m, n))
    basis: list[tuple[int, int]] = []
    i = j = 0
    ra, rb = a[0], b[0]
    while True:
        t = min(ra, rb)
        X[i, j] = t
        basis.append((i, j))
        ra -= t
        rb -= t
        if i == m - 1 and j == n - 1:
            break
        # Exhausted row moves down, otherwise move right; simultaneous
        # exhaustion leaves a zero-flow basic cell in the next column.
        if ra <= 1e-15 * (1.0 + a[i]) and i < m - 1:
            i += 1
            ra = a[i]
        else:
            j += 1
            rb = b[j]
    return X, basis


def _potentials(basis, C, m, n):
    """Dual potentials from the basis tree: u_i + v_j = C_ij on basic cells."""
    adj: list[list[tuple[int, int, int]]] = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append((m + j, i, j))
        adj[m + j].append((i, i, j))
    u = np.zeros(m)
    v = np.zeros(n)
    seen = np.zeros(m + n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        node = stack.pop()
        for other, i, j in adj[node]:
            if seen[other]:
                continue
            seen[other] = True
            if other >= m:
                v[other - m] = C[i, j] - u[i]
            else:
                u[other] = C[i, j] - v[j]
            stack.append(other)
    if not seen.all():
        raise RuntimeError("transport basis is not spanning; numerical breakdown")
    return u, v


def _basis_cycle(basis, ei, ej, m, n):
    """Alternating cycle created by adding cell (ei, ej) to the basis tree.

    Returns cells starting with the entering cell; even positions gain flow,
    odd positions lose it.
    """
    adj: dict[int, list[tuple[int, tuple[int, int]]]] = {}
    for i, j in basis:
        adj.setdefault(i, []).append((m + j, (i, j)))
        adj.setdefault(m + j, []).append((i, (i, j)))
    start, goal = m + ej, ei
    parent: dict[int, tuple[int, tuple[int, int]]] = {start: (-1, (-1, -1))}
    stack = [start]
    while stack:
        node = stack.pop()
        if node == goal:
            break
        for other, cell in adj.get(node, ()):
            if other not in parent:
                parent[other] = (node, cell)
                stack.append(other)
    if goal not in parent:
        raise RuntimeError("entering cell closes no cycle; basis corrupted")
    cells = [(ei, ej)]
    node = goal
    while node != start:
        prev, cell = parent[node]
        cells.append(cell)
        node = prev
    return cells
