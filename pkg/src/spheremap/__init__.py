"""MAP inference on discrete factor graphs via a sphere-constrained LP
reformulation, optimized with a perturbed ADMM that returns integer
labelings without rounding."""

from .admm import (
    DualState,
    KKTReport,
    QPConfig,
    ResidualReport,
    SolverConfig,
    SolverResult,
    SolverStatus,
    TraceRecord,
    augmented_lagrangian,
    extract_labeling,
    init_state,
    kkt_residuals,
    rho_at_iteration,
    solve,
    step,
    update_duals,
    update_factor,
    update_upsilon,
    update_variables,
)
from .factor_graph import (
    LOG_TABLE_FLOOR,
    ConsistencyMap,
    FactorGraph,
    FactorSpec,
    PrimalState,
    UaiParseError,
    encode_labeling,
    evaluate_logpot,
    factor_config_index,
    factor_config_states,
    parse_uai,
    serialize_uai,
)
from .geometry import (
    SolutionClass,
    SolutionKind,
    classify_solution,
    project_simplex,
    project_sphere,
)
from .oracle import ModelTooLargeError, OracleLimit, brute_force_map, pgd_qp_oracle
from .qp_simplex import (
    QPSolution,
    SimplexQP,
    simplex_vi_residual,
    solve_simplex_qp,
)
from .cli import generate_model

__version__ = "0.1.0"

__all__ = [
    "ConsistencyMap",
    "DualState",
    "FactorGraph",
    "FactorSpec",
    "KKTReport",
    "LOG_TABLE_FLOOR",
    "ModelTooLargeError",
    "OracleLimit",
    "PrimalState",
    "QPConfig",
    "QPSolution",
    "ResidualReport",
    "SimplexQP",
    "SolutionClass",
    "SolutionKind",
    "SolverConfig",
    "SolverResult",
    "SolverStatus",
    "TraceRecord",
    "UaiParseError",
    "augmented_lagrangian",
    "brute_force_map",
    "classify_solution",
    "encode_labeling",
    "evaluate_logpot",
    "extract_labeling",
    "factor_config_index",
    "factor_config_states",
    "generate_model",
    "init_state",
    "kkt_residuals",
    "parse_uai",
    "pgd_qp_oracle",
    "project_simplex",
    "project_sphere",
    "rho_at_iteration",
    "serialize_uai",
    "simplex_vi_residual",
    "solve",
    "solve_simplex_qp",
    "step",
    "update_duals",
    "update_factor",
    "update_upsilon",
    "update_variables",
]
