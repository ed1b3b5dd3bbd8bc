"""Command-line surface of the ``gl`` tool.

Every subcommand prints JSON on stdout (or writes CSV files) and reports
group indices 1-based, as they are given on the command line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any, TextIO

import numpy as np

from src.adapters.driven.config.settings import Settings
from src.adapters.driven.io.data_files import (
    load_blocks,
    load_covariance,
    load_dataset,
    load_f_coords,
    load_model,
)
from src.adapters.driven.io.results import git_revision, write_histogram, write_path, write_sweep
from src.adapters.driven.metrics.replication_metrics import ReplicationMetrics
from src.core.consistency import (
    ConditionReport,
    condition_value,
    loading_free_condition,
    pattern_probability_limit,
    refined_condition,
)
from src.core.gaussian import analytic_condition
from src.core.mkl import (
    KernelProblem,
    KernelSpec,
    adaptive_mkl,
    estimate_condition,
    kappa_schedule,
    kernel_problem,
    mkl_kkt_check,
    mkl_solve,
)
from src.core.model import BlockStructure, SparsityPattern, empirical_moments, relative_pattern
from src.core.solver import (
    GridSpec,
    adaptive_group_lasso,
    regularization_path,
    solve_fixed_lambda,
    solve_fixed_mu,
)
from src.core.sweep import ExperimentConfig, Scenario, SweepGrid, classify_paths, run_sweep

__all__ = ["build_parser", "dispatch", "parse_pattern"]

logger = logging.getLogger(__name__)

NONPARAMETRIC_N_GRID = (100, 300, 1_000)


def parse_pattern(text: str) -> SparsityPattern:
    """Parse a 1-based comma list such as ``1,3`` into a 0-based pattern.

    Raises:
        ValueError: On non-integer or non-positive entries.
    """
    try:
        groups = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValueError(f"pattern must be a comma-separated list of group numbers (got '{text}')") from None
    if any(g < 1 for g in groups):
        raise ValueError(f"group numbers start at 1 (got '{text}')")
    return SparsityPattern.of(g - 1 for g in groups)


def _floats(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers (got '{text}')") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers (got '{text}')") from None


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _emit(payload: dict[str, Any], out: TextIO) -> None:
    out.write(json.dumps(payload, indent=2, default=_jsonable) + "\n")


def _one_based(values: dict[int, float]) -> dict[str, float]:
    return {str(i + 1): float(v) for i, v in sorted(values.items())}


def _report_payload(report: ConditionReport) -> dict[str, Any]:
    return {
        "per_group_values": _one_based(report.per_group_values),
        "max_value": report.max_value,
        "verdict": str(report.verdict),
    }


def _pattern_list(pattern: SparsityPattern) -> list[int]:
    return [j + 1 for j in pattern.ordered()]


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per operation."""
    parser = argparse.ArgumentParser(prog="gl", description="Group Lasso and MKL consistency toolkit.")
    parser.add_argument("--env-file", type=Path, default=None, help="Extra .env file with GL_* overrides.")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="Solve the group Lasso on a data file.")
    solve.add_argument("--data", type=Path, required=True)
    solve.add_argument("--blocks", type=Path, required=True)
    solve.add_argument("--lambda", dest="lam", type=float, default=None)
    solve.add_argument("--squared", action="store_true", help="Use the squared-norm formulation.")
    solve.add_argument("--mu", type=float, default=None)
    solve.add_argument("--adaptive", action="store_true", help="Reweight by OLS group norms.")
    solve.add_argument("--gamma", type=float, default=1.0)

    path = sub.add_parser("path", help="Warm-started regularization path to CSV.")
    path.add_argument("--data", type=Path, required=True)
    path.add_argument("--blocks", type=Path, required=True)
    path.add_argument("--points", type=int, default=100)
    path.add_argument("--lmin-ratio", type=float, default=1e-3)
    path.add_argument("--out", type=Path, default=Path("path.csv"))

    check = sub.add_parser("check", help="Consistency conditions of a population model.")
    check.add_argument("--model", type=Path, required=True)
    check.add_argument("--blocks", type=Path, default=None, help="Needed when model.json has no group_sizes.")
    check.add_argument("--pattern", type=str, default=None, help="Defaults to the support of w.")
    check.add_argument("--lambda0", type=float, default=None)
    check.add_argument("--draws", type=int, default=None)
    check.add_argument("--seed", type=int, default=None)

    mkl = sub.add_parser("mkl", help="Multiple kernel learning on a data file.")
    mkl.add_argument("--data", type=Path, required=True)
    mkl.add_argument("--blocks", type=Path, required=True)
    mkl.add_argument("--kernel", type=str, action="append", default=None, help="Repeat once per group or give one for all.")
    mkl.add_argument("--mu", type=float, default=None)
    mkl.add_argument("--adaptive", action="store_true")
    mkl.add_argument("--gamma", type=float, default=2.0)
    mkl.add_argument("--mu0", type=float, default=0.1)

    mkl_check = sub.add_parser("mkl-check-condition", help="Data-driven kernel consistency condition.")
    mkl_check.add_argument("--data", type=Path, required=True)
    mkl_check.add_argument("--blocks", type=Path, required=True)
    mkl_check.add_argument("--kernel", type=str, action="append", default=None)
    mkl_check.add_argument("--pattern", type=str, required=True)
    mkl_check.add_argument("--kappa", type=str, default="auto", help="'auto' for kappa0 * n^(-1/3).")

    gauss = sub.add_parser("gaussian-cond", help="Closed-form kernel condition for Gaussian inputs.")
    gauss.add_argument("--S", dest="s", type=Path, required=True)
    gauss.add_argument("--bandwidths", type=_floats, required=True)
    gauss.add_argument("--pattern", type=str, required=True)
    gauss.add_argument("--fcoords", type=Path, required=True)
    gauss.add_argument("--weights", type=_floats, default=None)
    gauss.add_argument("--trunc", type=int, default=None)

    exp = sub.add_parser("experiment", help="Replication sweep of a synthetic scenario.")
    exp.add_argument("--scenario", type=Scenario, choices=list(Scenario), required=True)
    exp.add_argument("--seed", type=int, default=None)
    exp.add_argument("--reps", type=int, default=None)
    exp.add_argument("--n-grid", type=_ints, default=None)
    exp.add_argument("--points-per-decade", type=int, default=50)
    exp.add_argument("--decades", type=int, default=3)
    exp.add_argument("--adaptive-gamma", type=float, default=None)
    exp.add_argument("--mu-max", type=float, default=1.0)
    exp.add_argument("--workers", type=int, default=None)
    exp.add_argument("--out", type=Path, default=None)

    classify = sub.add_parser("classify", help="Three-way path classification histogram.")
    classify.add_argument("--count", type=int, default=500)
    classify.add_argument("--seed", type=int, default=None)
    classify.add_argument("--n", type=int, default=1_000)
    classify.add_argument("--threshold", type=float, default=0.1)
    classify.add_argument("--points-per-decade", type=int, default=50)
    classify.add_argument("--decades", type=int, default=3)
    classify.add_argument("--workers", type=int, default=None)
    classify.add_argument("--out", type=Path, default=Path("hist.csv"))

    return parser


def _cmd_solve(args: argparse.Namespace, settings: Settings, out: TextIO) -> int:
    data = load_dataset(args.data)
    blocks = load_blocks(args.blocks)
    mom = empirical_moments(data, blocks)
    numerics = settings.to_numerics()
    if args.adaptive:
        if args.mu is None:
            raise ValueError("--adaptive needs --mu")
        sol = adaptive_group_lasso(mom, blocks, args.mu, args.gamma, numerics=numerics)
    elif args.squared or args.mu is not None:
        if args.mu is None:
            raise ValueError("--squared needs --mu")
        sol = solve_fixed_mu(mom, blocks, args.mu, numerics=numerics)
    else:
        if args.lam is None:
            raise ValueError("solve needs --lambda (or --squared --mu)")
        sol = solve_fixed_lambda(mom, blocks, args.lam, numerics=numerics)
    _emit(
        {
            "w": sol.w,
            "intercept": sol.intercept,
            "pattern": _pattern_list(sol.pattern),
            "kkt_residual": sol.kkt_residual,
            "formulation": str(sol.form),
            "regularization": sol.reg,
            "weights": list(sol.weights),
        },
        out,
    )
    return 0


def _cmd_path(args: argparse.Namespace, settings: Settings, out: TextIO) -> int:
    data = load_dataset(args.data)
    blocks = load_blocks(args.blocks)
    result = regularization_path(
        empirical_moments(data, blocks),
        blocks,
        GridSpec(points=args.points, min_ratio=args.lmin_ratio),
        numerics=settings.to_numerics(),
    )
    target = write_path(result, blocks, args.out)
    _emit({"path": str(target), "points": len(result.grid)}, out)
    return 0


def _cmd_check(args: argparse.Namespace, settings: Settings, out: TextIO) -> int:
    model, file_blocks = load_model(args.model)
    blocks = load_blocks(args.blocks) if args.blocks is not None else file_blocks
    if blocks is None:
        raise ValueError(f"{args.model} has no group_sizes; pass --blocks")
    pattern = parse_pattern(args.pattern) if args.pattern else model.pattern(blocks)
    pattern.validate(blocks)
    numerics = settings.to_numerics()
    seed = settings.seed if args.seed is None else args.seed

    report = condition_value(model, blocks, pattern, numerics=numerics)
    bounds = loading_free_condition(model, blocks, pattern, seed=seed, numerics=numerics)
    refined = refined_condition(model, blocks, pattern, numerics=numerics)
    payload = _report_payload(report)
    payload["refined"] = _one_based(refined)
    payload["bounds"] = {
        "loading_free": bounds.value,
        "loading_free_per_group": _one_based(bounds.per_group),
        "spectral": bounds.spectral,
        "sdp": bounds.sdp,
    }
    if args.lambda0 is not None:
        prob = pattern_probability_limit(
            model, blocks, pattern, args.lambda0, args.draws, seed=seed, numerics=numerics
        )
        payload["pattern_prob"] = {"estimate": prob.estimate, "se": prob.std_error, "draws": prob.draws}
    _emit(payload, out)
    return 0


def _kernel_problem(args: argparse.Namespace) -> tuple[KernelProblem, BlockStructure]:
    data = load_dataset(args.data)
    blocks = load_blocks(args.blocks)
    texts = args.kernel or ["gaussian:b=1"]
    specs = [KernelSpec.parse(t) for t in texts]
    if len(specs) == 1:
        return kernel_problem(data, blocks, specs[0]), blocks
    return kernel_problem(data, blocks, specs), blocks


def _cmd_mkl(args: argparse.Namespace, settings: Settings, out: TextIO) -> int:
    prob, _ = _kernel_problem(args)
    numerics = settings.to_numerics()
    if args.adaptive:
        sol = adaptive_mkl(prob, args.mu0, args.gamma, numerics=numerics)
    else:
        if args.mu is None:
            raise ValueError("mkl needs --mu (or --adaptive --mu0)")
        sol = mkl_solve(prob, args.mu, numerics=numerics)
    pattern = relative_pattern(sol.norms, BlockStructure.uniform(prob.m, 1), numerics.pattern_rel_tol)
    _emit(
        {
            "eta": sol.eta,
            "norms": sol.norms,
            "duality_gap": sol.duality_gap,
            "mu": sol.mu,
            "pattern": _pattern_list(pattern),
            "kkt_residual": mkl_kkt_check(prob.with_weights(sol.weights), sol),
            "iterations": sol.iterations,
            "weights": list(sol.weights),
        },
        out,
    )
    return 0


def _cmd_mkl_check(args: argparse.Namespace, settings: Settings, out: TextIO) -> int:
    prob, blocks = _kernel_problem(args)
    pattern = parse_pattern(args.pattern)
    pattern.validate(blocks)
    if args.kappa == "auto":
        kappa = kappa_schedule(prob.n, settings.kappa0)
    else:
        try:
            kappa = float(args.kappa)
        except ValueError:
            raise ValueError(f"--kappa must be 'auto' or a positive number (got '{args.kappa}')") from None
    raw = estimate_condition(prob, pattern, kappa)
    scaled = {i: v / prob.weights[i] for i, v in raw.items()}
    _emit(
        {
            "kappa": kappa,
            "per_group_estimates": _one_based(scaled),
            "max_value": max(scaled.values(), default=0.0),
        },
        out,
    )
    return 0


def _cmd_gaussian(args: argparse.Namespace, settings: Settings, out: TextIO) -> int:
    s = load_covariance(args.s)
    pattern = parse_pattern(args.pattern)
    f_coords = load_f_coords(args.fcoords)
    m = s.shape[0]
    weights = args.weights if args.weights is not None else [1.0] * m
    report = analytic_condition(
        s,
        args.bandwidths,
        weights,
        pattern,
        f_coords,
        args.trunc,
        numerics=settings.to_numerics(),
    )
    _emit(_report_payload(report), out)
    return 0


async def _cmd_experiment(
    args: argparse.Namespace, settings: Settings, out: TextIO, stop_fn: Callable[[], bool]
) -> int:
    default_grid = NONPARAMETRIC_N_GRID if args.scenario is Scenario.NONPARAMETRIC else (100, 1_000, 10_000)
    config = ExperimentConfig(
        scenario=args.scenario,
        seed=settings.seed if args.seed is None else args.seed,
        n_grid=args.n_grid or default_grid,
        grid=SweepGrid(points_per_decade=args.points_per_decade, decades=args.decades),
        replications=settings.replications if args.reps is None else args.reps,
        adaptive_gamma=args.adaptive_gamma,
        output_dir=settings.output_dir if args.out is None else args.out,
        max_workers=settings.max_workers if args.workers is None else args.workers,
        mu_max=args.mu_max,
    )
    result = await run_sweep(
        config, stop_fn=stop_fn, metrics=ReplicationMetrics(), numerics=settings.to_numerics()
    )
    cells_path, meta_path = write_sweep(result, config.output_dir, git_hash=git_revision())
    _emit(
        {
            "cells": str(cells_path),
            "meta": str(meta_path),
            "condition_max": result.condition_max,
            "attempts": result.attempts,
            "failures": len(result.failure_messages),
        },
        out,
    )
    return 0


async def _cmd_classify(
    args: argparse.Namespace, settings: Settings, out: TextIO, stop_fn: Callable[[], bool]
) -> int:
    result = await classify_paths(
        args.count,
        settings.seed if args.seed is None else args.seed,
        n=args.n,
        grid=SweepGrid(points_per_decade=args.points_per_decade, decades=args.decades),
        threshold=args.threshold,
        max_workers=settings.max_workers if args.workers is None else args.workers,
        stop_fn=stop_fn,
        metrics=ReplicationMetrics(),
        numerics=settings.to_numerics(),
    )
    target = write_histogram(result, args.out)
    _emit({"histogram": str(target), "models": len(result.models), "failures": result.failures}, out)
    return 0


_SYNC_COMMANDS: dict[str, Callable[[argparse.Namespace, Settings, TextIO], int]] = {
    "solve": _cmd_solve,
    "path": _cmd_path,
    "check": _cmd_check,
    "mkl": _cmd_mkl,
    "mkl-check-condition": _cmd_mkl_check,
    "gaussian-cond": _cmd_gaussian,
}


async def dispatch(
    args: argparse.Namespace,
    settings: Settings,
    *,
    stop_fn: Callable[[], bool] = lambda: False,
    out: TextIO | None = None,
) -> int:
    """Run the parsed subcommand.

    Args:
        args: Parsed arguments from ``build_parser``.
        settings: Validated settings.
        stop_fn: Stop flag polled by the sweep commands.
        out: Stream receiving the JSON result (stdout by default).

    Returns:
        Process exit status.
    """
    out = sys.stdout if out is None else out
    logger.debug(f"Dispatching '{args.command}'")
    if args.command == "experiment":
        return await _cmd_experiment(args, settings, out, stop_fn)
    if args.command == "classify":
        return await _cmd_classify(args, settings, out, stop_fn)
    return _SYNC_COMMANDS[args.command](args, settings, out)
