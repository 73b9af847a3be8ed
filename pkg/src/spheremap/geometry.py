"""Closed-form projections and the four-way solution classifier.

The sphere here is always the one centered at the box midpoint: points x
with ``||x - 0.5||^2 = n/4``.  Its intersection with the local consistency
polytope is exactly the set of one-hot encodings, which is what lets the
solver return integer labelings without rounding.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .factor_graph import FactorGraph, PrimalState

# Below this distance from the sphere center any direction is an optimal
# projection; pick +1 deterministically so runs are reproducible.
SPHERE_CENTER_EPS = 1e-14

DEFAULT_TOL_INT = 1e-4
DEFAULT_TOL_CONS = 1e-4


def project_sphere(a: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``a`` onto ``{x : ||x - 0.5||^2 = n/4}``.

    Closed form: rescale the offset from the center to the sphere radius
    ``sqrt(n)/2``.  Idempotent on sphere points; at the exact center the
    all-ones direction is used as the tie-break.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.size
    if n < 1:
        raise ValueError("need a vector of length >= 1")
    offset = a - 0.5
    norm = float(np.linalg.norm(offset))
    radius = math.sqrt(n) / 2.0
    if norm < SPHERE_CENTER_EPS:
        return np.full(n, 0.5 + radius / math.sqrt(n))
    return 0.5 + offset * (radius / norm)


def project_simplex(a: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{x : sum(x) = 1, x >= 0}``.

    Sort-based threshold rule: the result is ``max(a - tau, 0)`` for the
    unique tau that makes the positive part sum to one.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.size
    if n < 1:
        raise ValueError("need a vector of length >= 1")
    u = np.sort(a)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, n + 1)
    support = np.nonzero(u * idx > css)[0]
    k = support[-1]
    tau = css[k] / (k + 1.0)
    return np.maximum(a - tau, 0.0)


class SolutionKind(enum.Enum):
    VALID = "Valid"
    UNIFORM = "Uniform"
    FRACTIONAL = "Fractional"
    APPROXIMATE = "Approximate"


@dataclass(frozen=True)
class SolutionClass:
    """Solution quality label plus the measured violations behind it.

    Exactly one kind applies: constraint violations beyond tolerance make a
    solution Approximate regardless of its values; among feasible solutions
    integrality decides Valid, then per-variable uniformity decides Uniform,
    anything else is Fractional.
    """

    kind: SolutionKind
    integrality_gap: float
    consistency_violation: float
    simplex_violation: float


def _simplex_violation(vec: np.ndarray) -> float:
    return max(abs(float(vec.sum()) - 1.0), max(0.0, -float(vec.min())))


def classify_solution(
    state: PrimalState,
    graph: FactorGraph,
    tol_int: float = DEFAULT_TOL_INT,
    tol_cons: float = DEFAULT_TOL_CONS,
) -> SolutionClass:
    """Classify a primal state as Valid / Uniform / Fractional / Approximate."""
    if len(state.mu_vars) != graph.num_variables or len(state.mu_factors) != len(graph.factors):
        raise ValueError("state dimensions do not match the graph")
    for i, mu in enumerate(state.mu_vars):
        if mu.shape != (graph.cardinalities[i],):
            raise ValueError(f"variable block {i} has wrong length")
    for a, fac in enumerate(graph.factors):
        if state.mu_factors[a].shape != fac.logpot_table.shape:
            raise ValueError(f"factor block {a} has wrong length")

    simplex = 0.0
    for mu in state.mu_vars:
        simplex = max(simplex, _simplex_violation(mu))
    for mu in state.mu_factors:
        simplex = max(simplex, _simplex_violation(mu))

    consistency = 0.0
    for a, fac in enumerate(graph.factors):
        for p, cmap in enumerate(graph.consistency_maps[a]):
            diff = cmap.marginalize(state.mu_factors[a]) - state.mu_vars[fac.scope[p]]
            consistency = max(consistency, float(np.abs(diff).max()))

    integrality = 0.0
    for mu in list(state.mu_vars) + list(state.mu_factors):
        integrality = max(integrality, float(np.abs(mu - np.round(mu)).max()))

    uniform_gap = 0.0
    for i, mu in enumerate(state.mu_vars):
        uniform_gap = max(
            uniform_gap, float(np.abs(mu - 1.0 / graph.cardinalities[i]).max())
        )

    if max(simplex, consistency) > tol_cons:
        kind = SolutionKind.APPROXIMATE
    elif integrality <= tol_int:
        kind = SolutionKind.VALID
    elif uniform_gap <= tol_int:
        kind = SolutionKind.UNIFORM
    else:
        kind = SolutionKind.FRACTIONAL
    return SolutionClass(kind, integrality, consistency, simplex)
