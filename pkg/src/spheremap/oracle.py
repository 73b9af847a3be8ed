"""Independent ground-truth generators used by tests and CLI verification.

Both oracles deliberately avoid the production code paths: brute-force MAP
re-implements labeling scoring with its own index arithmetic, and the
long-horizon projected-gradient QP oracle carries its own simplex
projection and Lipschitz estimate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
import numpy as np

from .factor_graph import FactorGraph
from .qp_simplex import SimplexQP

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


class ModelTooLargeError(ValueError):
    """Raised instead of silently approximating when enumeration is infeasible."""


@dataclass(frozen=True)
class OracleLimit:
    max_total_configs: int = 1 << 20

    def __post_init__(self) -> None:
        if self.max_total_configs < 1:
            raise ValueError("configuration limit must be positive")


def brute_force_map(
    graph: FactorGraph, limit: OracleLimit = OracleLimit()
) -> tuple[list[int], float]:
    """Exhaustive MAP: the maximizing labeling and its log-potential.

    Enumerates labelings in lexicographic order (last variable fastest), so
    ties resolve to the lexicographically smallest labeling.
    """
    total = 1
    for c in graph.cardinalities:
        total *= c
    if total > limit.max_total_configs:
        raise ModelTooLargeError(
            f"{total} label configurations exceed the limit {limit.max_total_configs}"
        )

    unary = [vec.tolist() for vec in graph.unary_logpot]
    factor_scopes = [fac.scope for fac in graph.factors]
    factor_cards = [
        [graph.cardinalities[v] for v in fac.scope] for fac in graph.factors
    ]
    factor_tables = [fac.logpot_table.tolist() for fac in graph.factors]

    best_score = -float("inf")
    best: tuple[int, ...] = ()
    for labeling in itertools.product(*(range(c) for c in graph.cardinalities)):
        score = 0.0
        for i, s in enumerate(labeling):
            score += unary[i][s]
        for scope, cards, table in zip(factor_scopes, factor_cards, factor_tables):
            t = 0
            for v, c in zip(scope, cards):
                t = t * c + labeling[v]
            score += table[t]
        if score > best_score:
            best_score = score
            best = labeling
    return list(best), best_score


def _project_simplex_sorted(a: np.ndarray) -> np.ndarray:
    # independent copy of the sort-based threshold rule
    u = np.sort(a)[::-1]
    total = 0.0
    tau = (np.sum(a) - 1.0) / a.size
    for j in range(a.size):
        total += u[j]
        cand = (total - 1.0) / (j + 1)
        if j + 1 < a.size and u[j + 1] >= cand:
            continue
        tau = cand
        break
    return np.maximum(a - tau, 0.0)


if numba is not None:

    @numba.njit(cache=True)
    def _pgd_loop(q: np.ndarray, c: np.ndarray, step: float, horizon: int) -> np.ndarray:
        n = c.shape[0]
        x = np.full(n, 1.0 / n)
        prev = x.copy()
        for k in range(horizon):
            g = q @ x + c
            a = x - step * g
            u = np.sort(a)[::-1]
            total = 0.0
            tau = (np.sum(a) - 1.0) / n
            for j in range(n):
                total += u[j]
                cand = (total - 1.0) / (j + 1)
                if j + 1 < n and u[j + 1] >= cand:
                    continue
                tau = cand
                break
            z = np.maximum(a - tau, 0.0)
            fixed = True
            for j in range(n):
                if z[j] != x[j]:
                    fixed = False
                    break
            if fixed:
                break
            cycle = True
            for j in range(n):
                if z[j] != prev[j]:
                    cycle = False
                    break
            if cycle:
                # two-cycle: the endpoint depends only on remaining parity
                if (horizon - 1 - k) % 2 == 1:
                    z = x
                return z
            prev = x
            x = z
        return x


def pgd_qp_oracle(problem: SimplexQP, horizon: int) -> np.ndarray:
    """Plain projected gradient for ``horizon`` iterations from the uniform point.

    Reference optimum for the production QP solver.  The loop short-circuits
    only on bitwise-exact fixed points or two-cycles of the iteration map,
    which leaves the returned point identical to the full run.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n = problem.dim
    dense = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        dense[:, j] = problem.apply_q(e)
    c = np.asarray(problem.linear, dtype=np.float64)

    rng = np.random.default_rng(1)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lip = 0.0
    for _ in range(50):
        w = dense @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            lip = 0.0
            break
        lip = norm
        v = w / norm
    step = 1.0 / max(lip, 1e-12)

    if numba is not None:
        return _pgd_loop(dense, c, step, horizon)

    x = np.full(n, 1.0 / n)
    prev = x.copy()
    for k in range(horizon):  # pragma: no cover - numba path preferred
        z = _project_simplex_sorted(x - step * (dense @ x + c))
        if np.array_equal(z, x):
            break
        if np.array_equal(z, prev):
            return x if (horizon - 1 - k) % 2 == 1 else z
        prev, x = x, z
    return x
