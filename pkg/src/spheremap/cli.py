"""Command-line front end: solve models, batch directories, generate fixtures.

Exit codes: 0 for a converged solve, 2 when the iteration budget ran out
(a report is still emitted), 1 for parse or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .admm import SolverConfig, SolverResult, SolverStatus, solve
from .factor_graph import (
    FactorGraph,
    FactorSpec,
    UaiParseError,
    parse_uai,
    serialize_uai,
)
from .oracle import ModelTooLargeError, OracleLimit, brute_force_map

TRACE_COLUMNS = [
    "iter",
    "lagrangian",
    "r_consistency",
    "r_sphere",
    "d_lambda",
    "d_mu",
    "rho",
    "max_factor_vi",
]

BATCH_COLUMNS = [
    "model",
    "labels",
    "logpot",
    "status",
    "classification",
    "iterations",
    "r_consistency",
    "r_sphere",
    "stationarity_max",
    "factor_vi_max",
    "runtime_ms",
    "oracle_logpot",
    "oracle_gap",
    "oracle_match",
    "epsilon",
    "rho0",
    "eta",
    "rho_upper",
    "stop_tol",
    "max_iter",
    "fixed_rho",
    "init_jitter",
    "seed",
    "error",
    "logpot_mean",
    "logpot_std",
    "iterations_mean",
    "iterations_std",
    "runtime_ms_mean",
    "runtime_ms_std",
]

ORACLE_MATCH_TOL = 1e-6


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--rho0", type=float, default=0.1)
    parser.add_argument("--eta", type=float, default=1.03)
    parser.add_argument("--rho-upper", type=float, default=2e5)
    parser.add_argument("--epsilon", type=float, default=1e-5)
    parser.add_argument("--tol", type=float, default=1e-5)
    parser.add_argument("--max-iter", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jitter", type=float, default=1e-3)
    parser.add_argument("--fixed-rho", type=float, default=None)
    parser.add_argument("--oracle", action="store_true")
    parser.add_argument("--oracle-limit", type=int, default=1 << 20)
    parser.add_argument("--parallel", type=int, default=1, metavar="WORKERS")
    parser.add_argument("--tables-are-log", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spheremap")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one UAI model")
    p_solve.add_argument("--model", required=True)
    p_solve.add_argument("--trace", default=None, metavar="CSV_PATH")
    p_solve.add_argument("--output", default=None, metavar="JSON_PATH")
    _add_solver_flags(p_solve)

    p_batch = sub.add_parser("batch", help="solve every .uai file in a directory")
    p_batch.add_argument("--dir", required=True)
    p_batch.add_argument("--output", default=None, metavar="CSV_PATH")
    _add_solver_flags(p_batch)

    p_gen = sub.add_parser("gen", help="write a synthetic UAI model")
    p_gen.add_argument("--topology", required=True, choices=["chain", "tree", "grid"])
    p_gen.add_argument("--vars", type=int, default=None)
    p_gen.add_argument("--rows", type=int, default=None)
    p_gen.add_argument("--cols", type=int, default=None)
    p_gen.add_argument("--states", type=int, default=2)
    p_gen.add_argument("--coupling", choices=["random", "symmetric"], default="random")
    p_gen.add_argument("--scale", type=float, default=1.0)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    return parser


def _config_from_args(args: argparse.Namespace) -> SolverConfig:
    return SolverConfig(
        epsilon=args.epsilon,
        rho0=args.rho0,
        eta=args.eta,
        rho_upper=args.rho_upper,
        stop_tol=args.tol,
        max_iter=args.max_iter,
        fixed_rho=args.fixed_rho,
        init_jitter=args.jitter,
        seed=args.seed,
        workers=args.parallel,
    )


def _config_echo(config: SolverConfig) -> dict:
    # worker count deliberately omitted: reports must not depend on it
    return {
        "epsilon": config.epsilon,
        "rho0": config.rho0,
        "eta": config.eta,
        "rho_upper": config.rho_upper,
        "stop_tol": config.stop_tol,
        "max_iter": config.max_iter,
        "fixed_rho": config.fixed_rho,
        "init_jitter": config.init_jitter,
        "seed": config.seed,
    }


def _oracle_section(
    graph: FactorGraph, result: SolverResult, limit: int
) -> tuple[Optional[dict], Optional[str]]:
    try:
        _, oracle_logpot = brute_force_map(graph, OracleLimit(limit))
    except ModelTooLargeError as exc:
        return None, str(exc)
    gap = oracle_logpot - result.logpot
    return (
        {
            "logpot": oracle_logpot,
            "gap": gap,
            "match": bool(abs(gap) <= ORACLE_MATCH_TOL),
        },
        None,
    )


def run_model(
    graph: FactorGraph,
    config: SolverConfig,
    model_path: str,
    want_oracle: bool,
    oracle_limit: int,
) -> tuple[dict, SolverResult]:
    """Solve one parsed model and build its report dictionary."""
    start = time.perf_counter()
    result = solve(graph, config)
    runtime_ms = (time.perf_counter() - start) * 1e3

    oracle_section: Optional[dict] = None
    if want_oracle:
        oracle_section, oracle_reason = _oracle_section(graph, result, oracle_limit)
    else:
        oracle_reason = "not requested"

    report = {
        "model": model_path,
        "labels": [int(s) for s in result.labeling],
        "logpot": result.logpot,
        "status": result.status.value,
        "classification": result.classification.kind.value,
        "iterations": result.iterations,
        "residuals": {
            "consistency": result.residuals.consistency,
            "sphere": result.residuals.sphere,
            "stationarity_max": result.residuals.stationarity_max,
            "factor_vi_max": result.residuals.factor_vi_max,
        },
        "runtime_ms": runtime_ms,
        "config": _config_echo(config),
        "oracle": oracle_section,
        "oracle_reason": oracle_reason,
    }
    return report, result


def _write_trace(path: str, result: SolverResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for rec in result.trace:
            writer.writerow(
                [
                    rec.iteration,
                    repr(rec.lagrangian),
                    repr(rec.r_consistency),
                    repr(rec.r_sphere),
                    repr(rec.d_lambda),
                    repr(rec.d_mu),
                    repr(rec.rho),
                    repr(rec.max_factor_vi),
                ]
            )


def _emit(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_solve(args: argparse.Namespace) -> int:
    try:
        config = _config_from_args(args)
    except ValueError as exc:
        print(f"spheremap: invalid configuration: {exc}", file=sys.stderr)
        return 1
    try:
        text = Path(args.model).read_text()
    except OSError as exc:
        print(f"spheremap: cannot read model: {exc}", file=sys.stderr)
        return 1
    try:
        graph = parse_uai(text, tables_are_log=args.tables_are_log)
    except UaiParseError as exc:
        print(f"spheremap: {args.model}: {exc}", file=sys.stderr)
        return 1

    report, result = run_model(graph, config, args.model, args.oracle, args.oracle_limit)
    if args.trace is not None:
        _write_trace(args.trace, result)
    _emit(json.dumps(report, indent=2) + "\n", args.output)
    return 0 if result.status == SolverStatus.CONVERGED else 2


def cmd_batch(args: argparse.Namespace) -> int:
    try:
        config = _config_from_args(args)
    except ValueError as exc:
        print(f"spheremap: invalid configuration: {exc}", file=sys.stderr)
        return 1
    directory = Path(args.dir)
    if not directory.is_dir():
        print(f"spheremap: not a directory: {args.dir}", file=sys.stderr)
        return 1

    rows = []
    all_parsed = True
    for path in sorted(directory.glob("*.uai"), key=lambda p: p.name):
        row = {col: "" for col in BATCH_COLUMNS}
        row["model"] = str(path)
        row.update(
            {
                "epsilon": config.epsilon,
                "rho0": config.rho0,
                "eta": config.eta,
                "rho_upper": config.rho_upper,
                "stop_tol": config.stop_tol,
                "max_iter": config.max_iter,
                "fixed_rho": "" if config.fixed_rho is None else config.fixed_rho,
                "init_jitter": config.init_jitter,
                "seed": config.seed,
            }
        )
        try:
            graph = parse_uai(path.read_text(), tables_are_log=args.tables_are_log)
        except (OSError, UaiParseError) as exc:
            all_parsed = False
            row["status"] = "Error"
            row["error"] = str(exc)
            rows.append(row)
            continue
        report, _ = run_model(graph, config, str(path), args.oracle, args.oracle_limit)
        row["labels"] = " ".join(str(s) for s in report["labels"])
        row["logpot"] = repr(report["logpot"])
        row["status"] = report["status"]
        row["classification"] = report["classification"]
        row["iterations"] = report["iterations"]
        row["r_consistency"] = repr(report["residuals"]["consistency"])
        row["r_sphere"] = repr(report["residuals"]["sphere"])
        row["stationarity_max"] = repr(report["residuals"]["stationarity_max"])
        row["factor_vi_max"] = repr(report["residuals"]["factor_vi_max"])
        row["runtime_ms"] = repr(report["runtime_ms"])
        if report["oracle"] is not None:
            row["oracle_logpot"] = repr(report["oracle"]["logpot"])
            row["oracle_gap"] = repr(report["oracle"]["gap"])
            row["oracle_match"] = report["oracle"]["match"]
        rows.append(row)

    solved = [r for r in rows if r["status"] != "Error"]
    agg = {col: "" for col in BATCH_COLUMNS}
    agg["model"] = "aggregate"
    if solved:
        logpots = np.array([float(r["logpot"]) for r in solved])
        iters = np.array([float(r["iterations"]) for r in solved])
        runtimes = np.array([float(r["runtime_ms"]) for r in solved])
        agg["logpot_mean"] = repr(float(logpots.mean()))
        agg["logpot_std"] = repr(float(logpots.std()))
        agg["iterations_mean"] = repr(float(iters.mean()))
        agg["iterations_std"] = repr(float(iters.std()))
        agg["runtime_ms_mean"] = repr(float(runtimes.mean()))
        agg["runtime_ms_std"] = repr(float(runtimes.std()))
    rows.append(agg)

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BATCH_COLUMNS)
    writer.writeheader()
    writer.writerows(rows)
    _emit(buf.getvalue(), args.output)
    return 0 if all_parsed else 1


def generate_model(
    topology: str,
    *,
    num_variables: Optional[int] = None,
    rows: Optional[int] = None,
    cols: Optional[int] = None,
    states: int = 2,
    coupling: str = "random",
    scale: float = 1.0,
    seed: int = 0,
) -> FactorGraph:
    """Synthetic chain / tree / grid model with pairwise factors.

    Unary log-potentials are drawn at a tenth of the coupling scale (enough
    to break ties); with ``coupling='symmetric'`` every pairwise table
    satisfies ``table[s, t] == table[t, s]`` exactly.
    """
    if states < 2:
        raise ValueError("need at least two states")
    if scale < 0:
        raise ValueError("scale must be >= 0")
    rng = np.random.default_rng(seed)

    if topology in ("chain", "tree"):
        if num_variables is None or num_variables < 2:
            raise ValueError(f"{topology} topology needs --vars >= 2")
        n = num_variables
        if topology == "chain":
            edges = [(i, i + 1) for i in range(n - 1)]
        else:
            edges = [(int(rng.integers(0, j)), j) for j in range(1, n)]
    elif topology == "grid":
        if rows is None or cols is None or rows < 1 or cols < 1 or rows * cols < 2:
            raise ValueError("grid topology needs --rows and --cols with >= 2 cells")
        n = rows * cols
        edges = []
        for r in range(rows):
            for c in range(cols):
                v = r * cols + c
                if c + 1 < cols:
                    edges.append((v, v + 1))
                if r + 1 < rows:
                    edges.append((v, v + cols))
    else:
        raise ValueError(f"unknown topology {topology!r}")

    unary = [rng.uniform(-0.1 * scale, 0.1 * scale, states) for _ in range(n)]
    factors = []
    for i, j in edges:
        if coupling == "symmetric":
            raw = rng.uniform(-scale, scale, (states, states))
            table = ((raw + raw.T) / 2.0).ravel()
        elif coupling == "random":
            table = rng.uniform(-scale, scale, states * states)
        else:
            raise ValueError(f"unknown coupling {coupling!r}")
        factors.append(FactorSpec((i, j), table))
    return FactorGraph((states,) * n, tuple(unary), tuple(factors))


def cmd_gen(args: argparse.Namespace) -> int:
    try:
        graph = generate_model(
            args.topology,
            num_variables=args.vars,
            rows=args.rows,
            cols=args.cols,
            states=args.states,
            coupling=args.coupling,
            scale=args.scale,
            seed=args.seed,
        )
    except ValueError as exc:
        print(f"spheremap: {exc}", file=sys.stderr)
        return 1
    Path(args.out).write_text(serialize_uai(graph))
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "solve":
        return cmd_solve(args)
    if args.command == "batch":
        return cmd_batch(args)
    return cmd_gen(args)


if __name__ == "__main__":
    sys.exit(main())
