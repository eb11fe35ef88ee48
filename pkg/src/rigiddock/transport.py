"""Exact optimal transport between uniform marginals.

Solves min <T, C> over S x K plans with row sums 1/S and column sums 1/K
using the transportation simplex. Internally the marginals are scaled to
integers (each row supplies K units, each column demands S units, grand
total S*K), so every allocation stays an exact integer and degeneracy
handling never depends on floating-point comparisons. The entering cell
is normally the most negative reduced cost (fast in practice); after a
long run of zero-volume pivots the rule switches to Bland's, whose
first-improving choice provably cannot cycle, until volume moves again.

The returned plan is a vertex of the transport polytope with at most
S+K-1 nonzero entries.
"""

from __future__ import annotations

import numpy as np

_MAX_PIVOTS_FACTOR = 200


def solve_uniform_transport(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Optimal plan and objective for uniform marginals U(S, K).

    cost: S x K array of finite values. Returns (plan, objective) where
    plan rows sum to 1/S and columns to 1/K.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError(f"solve_uniform_transport: cost shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("solve_uniform_transport: cost has non-finite entries")
    s, k = cost.shape

    alloc, row_adj, col_adj = _northwest_corner(s, k)
    eps = 1e-12 * (1.0 + float(np.abs(cost).max()))
    max_pivots = _MAX_PIVOTS_FACTOR * (s + k) * max(s, k)
    zero_streak = 0
    bland = False
    for _ in range(max_pivots):
        u, v = _tree_duals(cost, row_adj, col_adj, s, k)
        reduced = cost - u[:, None] - v[None, :]
        if bland:
            entering = _first_negative_reduced_cost(reduced, alloc, eps)
        else:
            entering = _most_negative_reduced_cost(reduced, eps)
        if entering is None:
            break
        theta = _pivot(alloc, row_adj, col_adj, entering)
        if theta == 0:
            zero_streak += 1
            bland = bland or zero_streak > s + k + 4
        else:
            zero_streak = 0
            bland = False
    else:
        raise RuntimeError("transportation simplex failed to converge")

    plan = alloc.astype(np.float64) / float(s * k)
    return plan, float(np.sum(plan * cost))


def _northwest_corner(s: int, k: int):
    """Integer NW-corner start: supplies of k per row, demands of s per column."""
    alloc = np.zeros((s, k), dtype=np.int64)
    row_adj: list[set[int]] = [set() for _ in range(s)]
    col_adj: list[set[int]] = [set() for _ in range(k)]
    supply = [k] * s
    demand = [s] * k
    i = j = 0
    while True:
        amount = min(supply[i], demand[j])
        alloc[i, j] = amount
        row_adj[i].add(j)
        col_adj[j].add(i)
        supply[i] -= amount
        demand[j] -= amount
        if i == s - 1 and j == k - 1:
            break
        if supply[i] == 0 and demand[j] == 0:
            # Degenerate step: advance one pointer only; the next cell enters
            # the basis with a zero allocation, keeping the basis tree intact.
            if j < k - 1:
                j += 1
            else:
                i += 1
        elif supply[i] == 0:
            i += 1
        else:
            j += 1
    return alloc, row_adj, col_adj


def _tree_duals(cost, row_adj, col_adj, s, k):
    """Solve u_i + v_j = c_ij over the basis tree, anchored at u_0 = 0."""
    u = np.full(s, np.nan)
    v = np.full(k, np.nan)
    u[0] = 0.0
    stack = [("r", 0)]
    while stack:
        kind, idx = stack.pop()
        if kind == "r":
            for j in row_adj[idx]:
                if np.isnan(v[j]):
                    v[j] = cost[idx, j] - u[idx]
                    stack.append(("c", j))
        else:
            for i in col_adj[idx]:
                if np.isnan(u[i]):
                    u[i] = cost[i, idx] - v[idx]
                    stack.append(("r", i))
    return u, v


def _first_negative_reduced_cost(reduced, alloc, eps):
    """Bland's entering rule: first cell in row-major order that improves."""
    candidates = np.argwhere(reduced < -eps)
    for i, j in candidates:
        if alloc[i, j] == 0:  # basic cells have zero reduced cost anyway
            return int(i), int(j)
    return None


def _most_negative_reduced_cost(reduced, eps):
    """Dantzig's entering rule: the steepest improving cell."""
    flat = int(np.argmin(reduced))
    i, j = divmod(flat, reduced.shape[1])
    if reduced[i, j] < -eps:
        return i, j
    return None


def _cycle_path(row_adj, col_adj, start_row, target_col):
    """Path of basic cells from start_row to target_col through the tree."""
    parent: dict[tuple[str, int], tuple[str, int] | None] = {("r", start_row): None}
    stack = [("r", start_row)]
    while stack:
        node = stack.pop()
        kind, idx = node
        if kind == "r":
            neighbors = (("c", j) for j in row_adj[idx])
        else:
            neighbors = (("r", i) for i in col_adj[idx])
        for nxt in neighbors:
            if nxt in parent:
                continue
            parent[nxt] = node
            if nxt == ("c", target_col):
                cells = []
                cur = nxt
                while parent[cur] is not None:
                    prev = parent[cur]
                    if cur[0] == "c":
                        cells.append((prev[1], cur[1]))
                    else:
                        cells.append((cur[1], prev[1]))
                    cur = prev
                cells.reverse()
                return cells
            stack.append(nxt)
    raise RuntimeError("basis is not a spanning tree")


def _pivot(alloc, row_adj, col_adj, entering) -> int:
    """Push flow around the entering cell's cycle; returns the moved volume."""
    ei, ej = entering
    path = _cycle_path(row_adj, col_adj, ei, ej)
    # Around the cycle [entering, path...] signs alternate starting with +
    # on the entering cell, so odd path positions (0-based even) give back flow.
    minus = path[0::2]
    plus = path[1::2]
    theta = min(alloc[c] for c in minus)
    leaving = min(c for c in minus if alloc[c] == theta)

    alloc[ei, ej] += theta
    row_adj[ei].add(ej)
    col_adj[ej].add(ei)
    for c in plus:
        alloc[c] += theta
    for c in minus:
        alloc[c] -= theta
    li, lj = leaving
    row_adj[li].discard(lj)
    col_adj[lj].discard(li)
    return int(theta)
