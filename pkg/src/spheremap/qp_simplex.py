"""Simplex-constrained convex QP solver for the per-factor subproblems.

Minimizes ``0.5 <x, Qx> + <c, x>`` over the probability simplex.  Q is
supplied as an apply-function; the solver materializes it densely (the
instances are factor-table sized) and runs a primal active-set method,
which terminates in a handful of pivots even when Q is singular and badly
scaled -- the regime the penalty schedule produces, where fixed-step
first-order methods stall on the zero-curvature directions.  Optimality is
certified by the variational-inequality gap over the simplex vertices, so
the algorithm behind the contract stays swappable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .geometry import project_simplex

DEFAULT_QP_TOLERANCE = 1e-9
DEFAULT_QP_MAX_ITERATIONS = 500

_FEAS_EPS = 1e-12


@dataclass
class SimplexQP:
    """One simplex-constrained QP instance.

    ``apply_q`` must be linear, symmetric and positive semi-definite;
    ``max_iterations`` caps the number of active-set pivots.
    """

    dim: int
    apply_q: Callable[[np.ndarray], np.ndarray]
    linear: np.ndarray
    tolerance: float = DEFAULT_QP_TOLERANCE
    max_iterations: int = DEFAULT_QP_MAX_ITERATIONS


class QPSolution(NamedTuple):
    mu: np.ndarray
    vi_residual: float
    iterations: int
    objectives: Optional[np.ndarray] = None


def simplex_vi_residual(mu: np.ndarray, grad: np.ndarray) -> float:
    """First-order optimality gap ``max_j <grad, mu - e_j>`` over the simplex.

    A value <= tol certifies that no vertex improves the linearized
    objective by more than tol.
    """
    mu = np.asarray(mu, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if mu.shape != grad.shape:
        raise ValueError("point and gradient differ in length")
    if abs(float(mu.sum()) - 1.0) > 1e-8 or float(mu.min()) < -1e-8:
        raise ValueError("point is not on the probability simplex")
    return float(np.dot(grad, mu) - grad.min())


def _densify(apply_q: Callable[[np.ndarray], np.ndarray], dim: int) -> np.ndarray:
    q = np.empty((dim, dim))
    basis = np.zeros(dim)
    for j in range(dim):
        basis[j] = 1.0
        q[:, j] = apply_q(basis)
        basis[j] = 0.0
    return q


def _subspace_target(
    q: np.ndarray, c: np.ndarray, x: np.ndarray, free: np.ndarray
) -> tuple[Optional[np.ndarray], Optional[np.ndarray], Optional[float]]:
    """Minimize the QP over ``{z : z[free] free, sum z = 1, z[~free] = 0}``.

    Returns ``(target, None, nu)`` when the subspace minimizer exists, or
    ``(None, ray, None)`` with a zero-curvature strict-descent direction
    when the subspace problem is unbounded.  ``nu`` is the equality
    multiplier used for the dual-feasibility test of the clamped bounds.
    """
    k = free.size
    xf = x[free]
    if k == 1:
        target = np.array([1.0])
        nu = -float(q[free[0], free] @ target + c[free[0]])
        return target, None, nu
    # z = xf + Z u with Z spanning the zero-sum subspace
    z_basis = np.vstack([np.eye(k - 1), -np.ones(k - 1)])
    qf = q[np.ix_(free, free)]
    grad_f = qf @ xf + c[free]
    h_mat = z_basis.T @ qf @ z_basis
    h_vec = z_basis.T @ grad_f
    u, *_ = np.linalg.lstsq(h_mat, -h_vec, rcond=None)
    resid = h_mat @ u + h_vec
    scale = 1.0 + float(np.abs(h_vec).max(initial=0.0)) + float(np.abs(h_mat).max(initial=0.0))
    if float(np.linalg.norm(resid)) > 1e-9 * scale:
        # lstsq residual is orthogonal to range(H), hence a null direction of
        # the PSD reduced operator: the objective is linear and decreasing
        # along it, so ride it to the boundary.
        ray = z_basis @ (-resid)
        return None, ray, None
    target = xf + z_basis @ u
    grad_t = qf @ target + c[free]
    nu = -float(grad_t.mean())
    return target, None, nu


def solve_simplex_qp(
    problem: SimplexQP,
    start: Optional[np.ndarray] = None,
    track_objective: bool = False,
) -> QPSolution:
    """Minimize the QP over the simplex up to the VI-gap tolerance.

    Primal active-set method: the zero set of the (projected) start is the
    initial working set, each pivot either jumps to the current subspace
    minimizer, walks to the first blocking bound, or releases the bound
    with the most negative multiplier.  Objective values never increase
    along the pivot sequence.  On budget exhaustion the best iterate seen
    is returned, flagged with its achieved residual.
    """
    c = np.asarray(problem.linear, dtype=np.float64)
    if c.shape != (problem.dim,):
        raise ValueError("linear term has wrong length")
    if not np.all(np.isfinite(c)):
        raise ValueError("linear term has non-finite entries")
    n = problem.dim
    q = _densify(problem.apply_q, n)

    if start is None:
        x = np.full(n, 1.0 / n)
    else:
        x = project_simplex(np.asarray(start, dtype=np.float64))
    active = x <= 0.0
    if active.all():
        active[int(np.argmax(x))] = False
        x = np.zeros(n)
        x[~active] = 1.0

    def objective(point: np.ndarray) -> float:
        return 0.5 * float(point @ q @ point) + float(c @ point)

    def vi(point: np.ndarray) -> float:
        g = q @ point + c
        return float(np.dot(g, point) - g.min())

    objectives = [objective(x)] if track_objective else None
    best_x, best_res = x.copy(), vi(x)
    pivots = 0
    for pivots in range(problem.max_iterations + 1):
        res = vi(x)
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= problem.tolerance or pivots == problem.max_iterations:
            break

        free = np.flatnonzero(~active)
        target, ray, nu = _subspace_target(q, c, x, free)
        if target is not None and float(target.min()) >= -_FEAS_EPS:
            x = np.zeros(n)
            x[free] = np.maximum(target, 0.0)
            g = q @ x + c
            mults = g[active] + nu if active.any() else np.empty(0)
            if mults.size and float(mults.min()) < -problem.tolerance:
                release = np.flatnonzero(active)[int(np.argmin(mults))]
                active[release] = False
            # else: subspace-optimal and dual feasible; the VI check above
            # terminates on the next pass
        else:
            direction = ray if target is None else target - x[free]
            blocking = direction < -_FEAS_EPS
            if not blocking.any():
                break  # numerically flat; keep best iterate
            steps = x[free][blocking] / -direction[blocking]
            t = float(steps.min())
            if target is not None:
                t = min(t, 1.0)
            xf = x[free] + t * direction
            xf[np.flatnonzero(blocking)[steps <= t]] = 0.0
            x = np.zeros(n)
            x[free] = np.maximum(xf, 0.0)
            active = x <= 0.0
        if track_objective:
            objectives.append(objective(x))

    res = vi(x)
    if res > best_res:
        x, res = best_x, best_res
    return QPSolution(
        x, res, pivots, np.asarray(objectives) if track_objective else None
    )
