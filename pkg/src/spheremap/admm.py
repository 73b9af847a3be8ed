"""Perturbed ADMM loop on the sphere-augmented factor graph.

Each iteration updates, in order: the sphere block (closed-form projection),
every factor block (independent simplex QPs, parallelizable), every variable
block (closed form), then the multipliers.  A small perturbation ``epsilon``
regularizes the variable blocks and scales the coupling constraints to
``(1+epsilon) mu_i = upsilon_i`` and ``(1+epsilon) mu_i = M mu_alpha``,
which is what makes the whole scheme provably convergent; the residuals and
stationarity identities below are checkable at runtime and the test suite
exercises them every iteration.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .factor_graph import FactorGraph, PrimalState, evaluate_logpot
from .geometry import (
    SolutionClass,
    SolutionKind,
    classify_solution,
    project_simplex,
    project_sphere,
)
from .qp_simplex import (
    DEFAULT_QP_MAX_ITERATIONS,
    DEFAULT_QP_TOLERANCE,
    QPSolution,
    SimplexQP,
    simplex_vi_residual,
    solve_simplex_qp,
)


@dataclass
class DualState:
    """Multipliers for the sphere-coupling and local-consistency constraints.

    ``lambda_vars[i]`` pairs with ``(1+eps) mu_i = upsilon_i``;
    ``lambda_edges[a][p]`` pairs with ``(1+eps) mu_i = M mu_alpha`` for the
    variable at scope position ``p`` of factor ``a``.
    """

    lambda_vars: list[np.ndarray]
    lambda_edges: list[list[np.ndarray]]

    def copy(self) -> "DualState":
        return DualState(
            [v.copy() for v in self.lambda_vars],
            [[v.copy() for v in row] for row in self.lambda_edges],
        )


@dataclass(frozen=True)
class SolverConfig:
    """Hyper-parameters of the solver.

    The penalty starts at ``rho0`` and grows by ``eta`` each iteration up to
    ``rho_upper``; ``fixed_rho`` pins it instead (useful for checking the
    descent property, which needs ``rho > 1/epsilon``).  Stopping compares
    the two penalty-weighted constraint violations against ``stop_tol``.
    """

    epsilon: float = 1e-5
    rho0: float = 0.1
    eta: float = 1.03
    rho_upper: float = 2e5
    stop_tol: float = 1e-5
    max_iter: int = 500
    fixed_rho: Optional[float] = None
    init_jitter: float = 1e-3
    seed: int = 0
    qp_tolerance: float = DEFAULT_QP_TOLERANCE
    qp_max_iterations: int = DEFAULT_QP_MAX_ITERATIONS
    workers: int = 1

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.eta < 1:
            raise ValueError("eta must be >= 1")
        if self.rho0 <= 0:
            raise ValueError("rho0 must be > 0")
        if self.stop_tol <= 0:
            raise ValueError("stop_tol must be > 0")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if self.init_jitter < 0:
            raise ValueError("init_jitter must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.fixed_rho is None:
            if self.rho_upper <= 1.0 / self.epsilon:
                raise ValueError("rho_upper must exceed 1/epsilon")
        elif self.fixed_rho <= 0:
            raise ValueError("fixed_rho must be > 0")


@dataclass
class QPConfig:
    """Inner-solver settings shared by all factor subproblems."""

    tolerance: float = DEFAULT_QP_TOLERANCE
    max_iterations: int = DEFAULT_QP_MAX_ITERATIONS


class SolverStatus(enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERS = "MaxIters"


@dataclass(frozen=True)
class TraceRecord:
    """Per-iteration diagnostics.

    ``r_consistency`` and ``r_sphere`` are the penalty-weighted violations
    used for stopping; the two ``max_*_violation`` fields are the plain
    max-norm violations, easier to read once the penalty has grown large.
    """

    iteration: int
    lagrangian: float
    r_consistency: float
    r_sphere: float
    d_lambda: float
    d_mu: float
    rho: float
    max_factor_vi: float
    max_consistency_violation: float
    max_sphere_violation: float


@dataclass(frozen=True)
class ResidualReport:
    consistency: float
    sphere: float
    stationarity_max: float
    factor_vi_max: float


@dataclass(frozen=True)
class KKTReport:
    """Residuals of the first-order optimality system.

    ``stationarity[i]`` is the variable-block identity residual
    ``||-theta_i + eps*(deg_i+2)*mu_i + (1+eps)*(lambda_i + sum lambda_ia)||``
    which holds to round-off right after a dual update.  ``factor_vi[a]``
    certifies the factor block against the simplex vertices, and
    ``sphere_tangent_norm`` measures the multiplier component tangent to the
    sphere (zero when the multiplier is radial, as optimality requires).
    """

    sphere_coupling_max: float
    consistency_max: float
    stationarity: np.ndarray
    stationarity_max: float
    factor_vi: np.ndarray
    factor_vi_max: float
    sphere_tangent_norm: float


@dataclass(frozen=True)
class SolverResult:
    labeling: np.ndarray
    logpot: float
    status: SolverStatus
    classification: SolutionClass
    residuals: ResidualReport
    iterations: int
    trace: list[TraceRecord] = field(default_factory=list)


def rho_at_iteration(config: SolverConfig, k: int) -> float:
    """Penalty used by iteration ``k`` (0-based)."""
    if config.fixed_rho is not None:
        return config.fixed_rho
    return min(config.rho0 * config.eta**k, config.rho_upper)


def init_state(graph: FactorGraph, config: SolverConfig) -> tuple[PrimalState, DualState]:
    """Near-uniform start with seeded jitter, feasible block by block.

    The jitter breaks the symmetry that otherwise traps models with
    symmetric potentials at the uniform point.
    """
    rng = np.random.default_rng(config.seed)
    j = config.init_jitter
    mu_vars = []
    for c in graph.cardinalities:
        mu_vars.append(project_simplex(1.0 / c + rng.uniform(-j, j, c)))
    mu_factors = []
    for fac in graph.factors:
        size = fac.logpot_table.size
        mu_factors.append(project_simplex(1.0 / size + rng.uniform(-j, j, size)))
    upsilon = _split_variable_blocks(
        graph, project_sphere((1.0 + config.epsilon) * np.concatenate(mu_vars))
    )
    duals = DualState(
        [np.zeros(c) for c in graph.cardinalities],
        [[np.zeros(graph.cardinalities[v]) for v in fac.scope] for fac in graph.factors],
    )
    return PrimalState(mu_vars, mu_factors, upsilon), duals


def _split_variable_blocks(graph: FactorGraph, concat: np.ndarray) -> list[np.ndarray]:
    out = []
    offset = 0
    for c in graph.cardinalities:
        out.append(concat[offset : offset + c].copy())
        offset += c
    return out


def update_upsilon(
    state: PrimalState,
    duals: DualState,
    graph: FactorGraph,
    rho: float,
    epsilon: float,
) -> list[np.ndarray]:
    """Closed-form sphere-block update: shift by the multiplier, then project."""
    one = 1.0 + epsilon
    blocks = [
        one * state.mu_vars[i] + duals.lambda_vars[i] / rho
        for i in range(graph.num_variables)
    ]
    return _split_variable_blocks(graph, project_sphere(np.concatenate(blocks)))


def factor_subproblem(
    alpha: int,
    state: PrimalState,
    duals: DualState,
    graph: FactorGraph,
    rho: float,
    epsilon: float,
    qp_config: QPConfig,
) -> SimplexQP:
    """Assemble factor ``alpha``'s QP from the current variable blocks.

    The quadratic operator is the penalty-weighted sum of the neighbors'
    marginalization maps applied as gather/scatter (never densified); the
    linear term collects the factor's own log-potentials plus the coupling
    to the neighbors.
    """
    fac = graph.factors[alpha]
    maps = graph.consistency_maps[alpha]
    one = 1.0 + epsilon

    def apply_q(v: np.ndarray) -> np.ndarray:
        acc = np.zeros_like(v)
        for cmap in maps:
            acc += cmap.lift(cmap.marginalize(v))
        return rho * acc

    c = -fac.logpot_table.copy()
    for p, cmap in enumerate(maps):
        i = fac.scope[p]
        c -= cmap.lift(rho * one * state.mu_vars[i] + duals.lambda_edges[alpha][p])

    return SimplexQP(
        dim=fac.logpot_table.size,
        apply_q=apply_q,
        linear=c,
        tolerance=qp_config.tolerance,
        max_iterations=qp_config.max_iterations,
    )


def update_factor(
    alpha: int,
    state: PrimalState,
    duals: DualState,
    graph: FactorGraph,
    rho: float,
    epsilon: float,
    qp_config: QPConfig,
) -> QPSolution:
    """Solve factor ``alpha``'s simplex QP, warm-started from its current block.

    Reads only iteration-k variable blocks and multipliers, so all factor
    updates may run concurrently in any order.
    """
    problem = factor_subproblem(alpha, state, duals, graph, rho, epsilon, qp_config)
    return solve_simplex_qp(problem, start=state.mu_factors[alpha])


def update_variables(
    state: PrimalState,
    duals: DualState,
    graph: FactorGraph,
    rho: float,
    epsilon: float,
) -> list[np.ndarray]:
    """Closed-form variable update; expects sphere/factor blocks already updated.

    Each block minimizes ``a ||mu||^2 + <b, mu>`` whose gradient vanishes at
    ``mu = -b / (2a)``.
    """
    one = 1.0 + epsilon
    new_vars = []
    for i in range(graph.num_variables):
        nbrs = graph.variable_neighbors[i]
        deg = len(nbrs)
        two_a = epsilon * (deg + 2) + rho * one * one * (deg + 1)
        if two_a <= 0:
            raise AssertionError("variable subproblem lost strong convexity")
        acc = duals.lambda_vars[i] - rho * state.upsilon[i]
        for alpha, p in nbrs:
            cmap = graph.consistency_maps[alpha][p]
            acc = acc + duals.lambda_edges[alpha][p] - rho * cmap.marginalize(
                state.mu_factors[alpha]
            )
        b = -graph.unary_logpot[i] + one * acc
        new_vars.append(-b / two_a)
    return new_vars


def update_duals(
    state: PrimalState,
    duals: DualState,
    graph: FactorGraph,
    rho: float,
    epsilon: float,
) -> DualState:
    """Multiplier ascent on the two coupling constraints (all blocks at k+1)."""
    one = 1.0 + epsilon
    lambda_vars = [
        duals.lambda_vars[i] + rho * (one * state.mu_vars[i] - state.upsilon[i])
        for i in range(graph.num_variables)
    ]
    lambda_edges = []
    for a, fac in enumerate(graph.factors):
        row = []
        for p, cmap in enumerate(graph.consistency_maps[a]):
            i = fac.scope[p]
            row.append(
                duals.lambda_edges[a][p]
                + rho * (one * state.mu_vars[i] - cmap.marginalize(state.mu_factors[a]))
            )
        lambda_edges.append(row)
    return DualState(lambda_vars, lambda_edges)


def _coupling_residuals(
    state: PrimalState, graph: FactorGraph, rho: float, epsilon: float
) -> tuple[float, float, float, float]:
    """Penalty-weighted stopping residuals plus max-norm violations."""
    one = 1.0 + epsilon
    cons_sq = 0.0
    cons_inf = 0.0
    for a, fac in enumerate(graph.factors):
        for p, cmap in enumerate(graph.consistency_maps[a]):
            diff = one * state.mu_vars[fac.scope[p]] - cmap.marginalize(state.mu_factors[a])
            cons_sq += 0.5 * rho * float(np.dot(diff, diff))
            cons_inf = max(cons_inf, float(np.abs(diff).max()))
    sphere_sq = 0.0
    sphere_inf = 0.0
    for i in range(graph.num_variables):
        diff = one * state.mu_vars[i] - state.upsilon[i]
        sphere_sq += 0.5 * rho * float(np.dot(diff, diff))
        sphere_inf = max(sphere_inf, float(np.abs(diff).max()))
    return math.sqrt(cons_sq), math.sqrt(sphere_sq), cons_inf, sphere_inf


def augmented_lagrangian(
    state: PrimalState,
    duals: DualState,
    graph: FactorGraph,
    rho: float,
    epsilon: float,
) -> float:
    """Value of the penalized objective at the given point.

    Requires the factor blocks on the simplex and the sphere block on the
    sphere to within 1e-6 (indicator convention); returns ``inf`` otherwise.
    """
    one = 1.0 + epsilon
    for mu in state.mu_factors:
        if abs(float(mu.sum()) - 1.0) > 1e-6 or float(mu.min()) < -1e-6:
            return math.inf
    ups = np.concatenate(state.upsilon)
    radius = math.sqrt(ups.size) / 2.0
    if abs(float(np.linalg.norm(ups - 0.5)) - radius) > 1e-6:
        return math.inf

    value = 0.0
    for i in range(graph.num_variables):
        mu = state.mu_vars[i]
        deg = len(graph.variable_neighbors[i])
        value += -float(np.dot(graph.unary_logpot[i], mu))
        value += 0.5 * epsilon * (deg + 2) * float(np.dot(mu, mu))
    for a, fac in enumerate(graph.factors):
        value += -float(np.dot(fac.logpot_table, state.mu_factors[a]))
    for i in range(graph.num_variables):
        diff = one * state.mu_vars[i] - state.upsilon[i]
        value += float(np.dot(duals.lambda_vars[i], diff))
        value += 0.5 * rho * float(np.dot(diff, diff))
    for a, fac in enumerate(graph.factors):
        for p, cmap in enumerate(graph.consistency_maps[a]):
            diff = one * state.mu_vars[fac.scope[p]] - cmap.marginalize(state.mu_factors[a])
            value += float(np.dot(duals.lambda_edges[a][p], diff))
            value += 0.5 * rho * float(np.dot(diff, diff))
    return value


def kkt_residuals(
    state: PrimalState,
    duals: DualState,
    graph: FactorGraph,
    epsilon: float,
) -> KKTReport:
    """First-order optimality residuals at the current point (penalty-free)."""
    one = 1.0 + epsilon
    sphere_coupling = 0.0
    consistency = 0.0
    for i in range(graph.num_variables):
        sphere_coupling = max(
            sphere_coupling,
            float(np.linalg.norm(one * state.mu_vars[i] - state.upsilon[i])),
        )
    for a, fac in enumerate(graph.factors):
        for p, cmap in enumerate(graph.consistency_maps[a]):
            consistency = max(
                consistency,
                float(
                    np.linalg.norm(
                        one * state.mu_vars[fac.scope[p]]
                        - cmap.marginalize(state.mu_factors[a])
                    )
                ),
            )

    stationarity = np.empty(graph.num_variables)
    for i in range(graph.num_variables):
        nbrs = graph.variable_neighbors[i]
        lam = duals.lambda_vars[i].copy()
        for alpha, p in nbrs:
            lam += duals.lambda_edges[alpha][p]
        grad = (
            -graph.unary_logpot[i]
            + epsilon * (len(nbrs) + 2) * state.mu_vars[i]
            + one * lam
        )
        stationarity[i] = float(np.linalg.norm(grad))

    factor_vi = np.empty(len(graph.factors))
    for a, fac in enumerate(graph.factors):
        grad = -fac.logpot_table.copy()
        for p, cmap in enumerate(graph.consistency_maps[a]):
            grad -= cmap.lift(duals.lambda_edges[a][p])
        factor_vi[a] = simplex_vi_residual(state.mu_factors[a], grad)

    lam_concat = np.concatenate(duals.lambda_vars)
    ups = np.concatenate(state.upsilon)
    direction = ups - 0.5
    norm = float(np.linalg.norm(direction))
    unit = direction / norm
    tangent = lam_concat - float(np.dot(lam_concat, unit)) * unit
    return KKTReport(
        sphere_coupling_max=sphere_coupling,
        consistency_max=consistency,
        stationarity=stationarity,
        stationarity_max=float(stationarity.max()) if stationarity.size else 0.0,
        factor_vi=factor_vi,
        factor_vi_max=float(factor_vi.max()) if factor_vi.size else 0.0,
        sphere_tangent_norm=float(np.linalg.norm(tangent)),
    )


def extract_labeling(state: PrimalState, graph: FactorGraph) -> np.ndarray:
    """Per-variable argmax read-out; ties break toward the lowest state index."""
    if len(state.mu_vars) != graph.num_variables:
        raise ValueError("state does not match the graph")
    return np.array([int(np.argmax(mu)) for mu in state.mu_vars], dtype=np.int64)


def _step_impl(
    state: PrimalState,
    duals: DualState,
    graph: FactorGraph,
    config: SolverConfig,
    k: int,
    qp_config: QPConfig,
    executor: Optional[ThreadPoolExecutor],
) -> tuple[PrimalState, DualState, TraceRecord]:
    rho = rho_at_iteration(config, k)
    eps = config.epsilon

    new_upsilon = update_upsilon(state, duals, graph, rho, eps)

    def run_factor(alpha: int) -> QPSolution:
        return update_factor(alpha, state, duals, graph, rho, eps, qp_config)

    indices = range(len(graph.factors))
    if executor is not None:
        solutions = list(executor.map(run_factor, indices))
    else:
        solutions = [run_factor(a) for a in indices]
    new_factors = [sol.mu for sol in solutions]
    max_vi = max((sol.vi_residual for sol in solutions), default=0.0)

    mid = PrimalState(state.mu_vars, new_factors, new_upsilon)
    new_vars = update_variables(mid, duals, graph, rho, eps)
    new_state = PrimalState(new_vars, new_factors, new_upsilon)
    new_duals = update_duals(new_state, duals, graph, rho, eps)

    d_mu_sq = 0.0
    for old, new in zip(state.mu_vars, new_vars):
        diff = new - old
        d_mu_sq += float(np.dot(diff, diff))
    d_lambda_sq = 0.0
    for old, new in zip(duals.lambda_vars, new_duals.lambda_vars):
        diff = new - old
        d_lambda_sq += float(np.dot(diff, diff))
    for old_row, new_row in zip(duals.lambda_edges, new_duals.lambda_edges):
        for old, new in zip(old_row, new_row):
            diff = new - old
            d_lambda_sq += float(np.dot(diff, diff))

    r_cons, r_sphere, cons_inf, sphere_inf = _coupling_residuals(new_state, graph, rho, eps)
    record = TraceRecord(
        iteration=k,
        lagrangian=augmented_lagrangian(new_state, new_duals, graph, rho, eps),
        r_consistency=r_cons,
        r_sphere=r_sphere,
        d_lambda=math.sqrt(d_lambda_sq),
        d_mu=math.sqrt(d_mu_sq),
        rho=rho,
        max_factor_vi=max_vi,
        max_consistency_violation=cons_inf,
        max_sphere_violation=sphere_inf,
    )
    return new_state, new_duals, record


def step(
    state: PrimalState,
    duals: DualState,
    graph: FactorGraph,
    config: SolverConfig,
    k: int,
) -> tuple[PrimalState, DualState, TraceRecord]:
    """One full iteration at the penalty of iteration ``k``.

    Sphere and factor blocks read only iteration-k values and write disjoint
    slots; the result is identical for any worker count.
    """
    qp_config = QPConfig(config.qp_tolerance, config.qp_max_iterations)
    executor = None
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            return _step_impl(state, duals, graph, config, k, qp_config, pool)
    return _step_impl(state, duals, graph, config, k, qp_config, executor)


def solve(graph: FactorGraph, config: SolverConfig = SolverConfig()) -> SolverResult:
    """Run the solver until both stopping residuals drop below ``stop_tol``.

    Returns the decoded labeling of the final state when it converged or
    classifies as integer-feasible; otherwise (budget exhausted on a
    non-integer state) the best-scoring decode seen across iterations, since
    the objective is not monotone along the path.
    """
    state, duals = init_state(graph, config)
    qp_config = QPConfig(config.qp_tolerance, config.qp_max_iterations)

    best_labeling = extract_labeling(state, graph)
    best_logpot = evaluate_logpot(graph, best_labeling)
    trace: list[TraceRecord] = []
    status = SolverStatus.MAX_ITERS
    iterations = 0

    executor = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        for k in range(config.max_iter):
            state, duals, record = _step_impl(
                state, duals, graph, config, k, qp_config, executor
            )
            trace.append(record)
            iterations = k + 1
            labeling = extract_labeling(state, graph)
            logpot = evaluate_logpot(graph, labeling)
            if logpot > best_logpot:
                best_labeling, best_logpot = labeling, logpot
            if record.r_consistency < config.stop_tol and record.r_sphere < config.stop_tol:
                status = SolverStatus.CONVERGED
                break
    finally:
        if executor is not None:
            executor.shutdown()

    classification = classify_solution(state, graph)
    kkt = kkt_residuals(state, duals, graph, config.epsilon)
    if trace:
        r_cons, r_sphere = trace[-1].r_consistency, trace[-1].r_sphere
    else:
        r_cons, r_sphere, _, _ = _coupling_residuals(
            state, graph, rho_at_iteration(config, 0), config.epsilon
        )
    residuals = ResidualReport(
        consistency=r_cons,
        sphere=r_sphere,
        stationarity_max=kkt.stationarity_max,
        factor_vi_max=kkt.factor_vi_max,
    )

    final_labeling = extract_labeling(state, graph)
    final_logpot = evaluate_logpot(graph, final_labeling)
    if (
        status == SolverStatus.MAX_ITERS
        and classification.kind != SolutionKind.VALID
        and best_logpot > final_logpot
    ):
        labeling, logpot = best_labeling, best_logpot
    else:
        labeling, logpot = final_labeling, final_logpot

    return SolverResult(
        labeling=labeling,
        logpot=logpot,
        status=status,
        classification=classification,
        residuals=residuals,
        iterations=iterations,
        trace=trace,
    )
