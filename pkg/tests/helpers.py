"""Shared test oracles, independent of the production code paths."""

from __future__ import annotations

import itertools

import numpy as np

from spheremap import ConsistencyMap, FactorGraph, FactorSpec


def support_enumeration_qp(q: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact simplex QP minimum by enumerating all support sets.

    For each candidate support solves the equality-constrained stationarity
    system; the best feasible candidate is the global minimum because the
    optimum is exact on its own support.
    """
    n = c.size
    best_x, best_f = None, np.inf
    for r in range(1, n + 1):
        for support in itertools.combinations(range(n), r):
            idx = list(support)
            kkt = np.zeros((r + 1, r + 1))
            kkt[:r, :r] = q[np.ix_(idx, idx)]
            kkt[:r, r] = 1.0
            kkt[r, :r] = 1.0
            rhs = np.concatenate([-c[idx], [1.0]])
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
            if np.linalg.norm(kkt @ sol - rhs) > 1e-9 * (1 + np.abs(rhs).max()):
                continue
            xs = sol[:r]
            if xs.min() < -1e-11:
                continue
            x = np.zeros(n)
            x[idx] = np.maximum(xs, 0.0)
            f = 0.5 * x @ q @ x + c @ x
            if f < best_f:
                best_x, best_f = x, f
    return best_x, best_f


def dense_consistency_matrix(cmap: ConsistencyMap) -> np.ndarray:
    """0/1 matrix form of a marginalization map (tests only)."""
    m = np.zeros((cmap.num_states, cmap.states.size))
    for t, s in enumerate(cmap.states):
        m[s, t] = 1.0
    return m


def naive_logpot(graph: FactorGraph, labeling) -> float:
    """Term-by-term scoring with its own index arithmetic."""
    total = 0.0
    for i, s in enumerate(labeling):
        total += float(graph.unary_logpot[i][s])
    for fac in graph.factors:
        idx = 0
        for v in fac.scope:
            idx = idx * graph.cardinalities[v] + labeling[v]
        total += float(fac.logpot_table[idx])
    return total


def random_factor_graph(
    rng: np.random.Generator,
    max_vars: int = 5,
    max_states: int = 3,
    scale: float = 1.0,
    allow_higher_order: bool = True,
) -> FactorGraph:
    """Small random graph with pairwise and occasional ternary factors."""
    n = int(rng.integers(2, max_vars + 1))
    cards = tuple(int(rng.integers(2, max_states + 1)) for _ in range(n))
    unary = tuple(rng.uniform(-scale, scale, c) for c in cards)
    factors = []
    num_factors = int(rng.integers(1, n + 1))
    for _ in range(num_factors):
        order = 2
        if allow_higher_order and n >= 3 and rng.random() < 0.3:
            order = 3
        scope = tuple(int(v) for v in rng.choice(n, size=order, replace=False))
        size = 1
        for v in scope:
            size *= cards[v]
        factors.append(FactorSpec(scope, rng.uniform(-scale, scale, size)))
    return FactorGraph(cards, unary, tuple(factors))


def random_labeling(rng: np.random.Generator, graph: FactorGraph) -> list[int]:
    return [int(rng.integers(0, c)) for c in graph.cardinalities]


def random_psd_operator(
    rng: np.random.Generator, n: int
) -> tuple[np.ndarray, "callable"]:
    """Dense random PSD matrix plus its apply-function."""
    a = rng.standard_normal((n, n))
    q = a.T @ a / n
    return q, lambda v: q @ v
