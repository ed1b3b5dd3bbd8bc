"""Replication sweeps over sample sizes and regularization grids.

Finite scenarios run λ paths of the group Lasso on data drawn from a
conditioned random model; the nonparametric scenario runs the MKL solver on
a μ grid. Each replication draws from the stream (seed, n index, replication),
and aggregation follows job order, so results do not depend on the number of
workers.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import StrEnum
from functools import partial
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from src.core.consistency import PatternProbability, condition_value
from src.core.generators import (
    ConditionedModel,
    NonparametricModel,
    TargetVerdict,
    additive_function,
    gen_finite_model,
    gen_finite_model_conditioned,
    gen_nonparametric_model,
    nonparametric_condition,
    sample_nonparametric,
)
from src.core.mkl import (
    KernelKind,
    KernelSpec,
    adaptive_kernel_weights,
    kernel_matrix,
    kernel_problem,
    kappa_schedule,
    mkl_solve,
    predict,
)
from src.core.model import (
    BlockStructure,
    PopulationModel,
    SparsityPattern,
    empirical_moments,
    relative_pattern,
    sample_dataset,
)
from src.core.replication_loop import JobOutcome, run_replications
from src.core.rng import derive_seed, stream
from src.core.solver import (
    GridSpec,
    adaptive_weights,
    ols,
    regularization_path,
    solve_fixed_lambda,
)
from src.ports.metrics import MetricsPort
from src.ports.settings import DEFAULT_NUMERICS, NumericsPort

__all__ = [
    "Scenario",
    "SweepGrid",
    "ExperimentConfig",
    "SweepCell",
    "ExperimentResult",
    "PathClassification",
    "ClassificationResult",
    "run_sweep",
    "pattern_frequency",
    "classify_paths",
]

logger = logging.getLogger(__name__)

HELD_OUT = 500
CLASS_ERROR_THRESHOLD = 0.1
CLASS_N = 1000
CLASS_BIN_EDGES = tuple(np.round(np.linspace(-1.5, 1.5, 13), 6))

FloatArray = NDArray[np.float64]


class Scenario(StrEnum):
    FINITE_CONSISTENT = "finite-consistent"
    FINITE_WEAK_VIOLATED = "finite-weak-violated"
    FINITE_BOUNDARY_REFINED = "finite-boundary-refined"
    NONPARAMETRIC = "nonparametric"

    @property
    def target(self) -> TargetVerdict | None:
        return {
            Scenario.FINITE_CONSISTENT: TargetVerdict.STRICT,
            Scenario.FINITE_WEAK_VIOLATED: TargetVerdict.VIOLATED_NO_REFINE,
            Scenario.FINITE_BOUNDARY_REFINED: TargetVerdict.VIOLATED_REFINED,
        }.get(self)


@dataclass(slots=True, frozen=True)
class SweepGrid:
    """Logarithmic grid top·10^(−k/points_per_decade), k = 0..points_per_decade·decades."""

    points_per_decade: int = 50
    decades: int = 3

    def __post_init__(self) -> None:
        if self.points_per_decade < 1 or self.decades < 1:
            raise ValueError(f"grid needs positive density and span (got {self.points_per_decade}, {self.decades})")

    @property
    def size(self) -> int:
        return self.points_per_decade * self.decades + 1

    def log10_ratios(self) -> FloatArray:
        return -np.arange(self.size) / self.points_per_decade

    def as_grid_spec(self) -> GridSpec:
        return GridSpec(points=self.size, min_ratio=10.0 ** (-self.decades))


@dataclass(slots=True, frozen=True)
class ExperimentConfig:
    """One sweep: scenario, sample sizes, grid and replication count.

    Attributes:
        scenario: Which synthetic model to draw.
        seed: Root seed of every random quantity.
        n_grid: Increasing sample sizes.
        grid: Regularization grid (relative to λ_max for finite scenarios,
            below ``mu_max`` for the nonparametric one).
        replications: Replications per sample size.
        adaptive_gamma: Use adaptive weights with this exponent when set.
        output_dir: Where the adapters write the result files.
        max_workers: Worker threads.
        mu_max: Top of the absolute μ grid of the nonparametric scenario.
    """

    scenario: Scenario
    seed: int = 42
    n_grid: tuple[int, ...] = (100, 1_000, 10_000)
    grid: SweepGrid = field(default_factory=SweepGrid)
    replications: int = 50
    adaptive_gamma: float | None = None
    output_dir: Path = Path("results")
    max_workers: int = 4
    mu_max: float = 1.0

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise ValueError(f"replications must be at least 1 (got {self.replications})")
        if not self.n_grid or any(n < 2 for n in self.n_grid):
            raise ValueError(f"n_grid must hold sample sizes of at least 2 (got {self.n_grid})")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:], strict=False)):
            raise ValueError(f"n_grid must be increasing (got {self.n_grid})")
        if self.mu_max <= 0:
            raise ValueError(f"mu_max must be positive (got {self.mu_max})")

    def echo(self) -> dict[str, object]:
        """JSON-friendly view used for the metadata sidecar and the config hash."""
        return {
            "scenario": str(self.scenario),
            "seed": self.seed,
            "n_grid": list(self.n_grid),
            "points_per_decade": self.grid.points_per_decade,
            "decades": self.grid.decades,
            "replications": self.replications,
            "adaptive_gamma": self.adaptive_gamma,
            "mu_max": self.mu_max,
        }


@dataclass(slots=True, frozen=True)
class SweepCell:
    """Aggregate over the successful replications of one (n, grid point) cell.

    Attributes:
        n: Sample size.
        grid_index: Position on the grid (0 = largest regularization).
        log10_ratio: log10(reg/top) of the grid point.
        mean_reg: Mean absolute regularization over the replications.
        pattern_freq: Share of replications that selected the true pattern.
        log_mse: log10 of the mean squared estimation error.
        ok: Successful replications.
        failures: Failed replications (solver errors, cancellations).
    """

    n: int
    grid_index: int
    log10_ratio: float
    mean_reg: float
    pattern_freq: float
    log_mse: float
    ok: int
    failures: int


@dataclass(slots=True, frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    cells: tuple[SweepCell, ...]
    condition_max: float
    attempts: int
    failure_messages: tuple[str, ...] = ()


@dataclass(slots=True, frozen=True)
class _Replication:
    regs: FloatArray
    pattern_ok: NDArray[np.bool_]
    sq_error: FloatArray


def _finite_replication(
    model: PopulationModel,
    blocks: BlockStructure,
    pattern: SparsityPattern,
    n: int,
    grid: SweepGrid,
    adaptive_gamma: float | None,
    seed: int,
    key: tuple[int, ...],
    numerics: NumericsPort,
) -> _Replication:
    data = sample_dataset(model, n, stream(seed, *key))
    mom = empirical_moments(data, blocks)
    used = blocks
    if adaptive_gamma is not None:
        used = blocks.with_weights(adaptive_weights(ols(mom), blocks, adaptive_gamma))
    path = regularization_path(mom, used, grid.as_grid_spec(), numerics=numerics)
    return _Replication(
        regs=np.asarray(path.grid),
        pattern_ok=np.array([sol.pattern == pattern for sol in path.solutions]),
        sq_error=np.array([float(np.sum((sol.w - model.w) ** 2)) for sol in path.solutions]),
    )


def _nonparametric_replication(
    npm: NonparametricModel,
    n: int,
    mus: FloatArray,
    adaptive_gamma: float | None,
    seed: int,
    key: tuple[int, ...],
    numerics: NumericsPort,
) -> _Replication:
    rng = stream(seed, *key)
    data = sample_nonparametric(npm, n, rng)
    held_out = sample_nonparametric(npm, HELD_OUT, rng)
    spec = KernelSpec(kind=KernelKind.GAUSSIAN, bandwidth=1.0)
    blocks = BlockStructure.uniform(npm.m, 1)
    prob = kernel_problem(data, blocks, spec)
    if adaptive_gamma is not None:
        prob = prob.with_weights(adaptive_kernel_weights(prob, adaptive_gamma, kappa_schedule(n, numerics.kappa0)))
    cross = [kernel_matrix(spec, held_out.x[:, j], data.x[:, j]) for j in range(npm.m)]
    truth = additive_function(npm, held_out.x)
    truth = truth - truth.mean()

    pattern_ok = []
    sq_error = []
    for mu in mus:
        sol = mkl_solve(prob, float(mu), numerics=numerics)
        pattern_ok.append(relative_pattern(sol.norms, blocks, numerics.pattern_rel_tol) == npm.pattern)
        fitted = predict(sol, cross)
        sq_error.append(float(np.mean((fitted - fitted.mean() - truth) ** 2)))
    return _Replication(regs=np.asarray(mus), pattern_ok=np.array(pattern_ok), sq_error=np.array(sq_error))


def _aggregate(
    config: ExperimentConfig,
    outcomes: list[JobOutcome[_Replication]],
    owners: list[int],
) -> tuple[tuple[SweepCell, ...], tuple[str, ...]]:
    ratios = config.grid.log10_ratios()
    cells: list[SweepCell] = []
    messages: list[str] = []
    for ni, n in enumerate(config.n_grid):
        mine = [o for o, owner in zip(outcomes, owners, strict=True) if owner == ni]
        good = [o.value for o in mine if o.ok and o.value is not None]
        failures = len(mine) - len(good)
        messages.extend(f"n={n} job {o.index}: {o.error!r}" for o in mine if not o.ok)
        for k, ratio in enumerate(ratios):
            if good:
                regs = np.array([g.regs[k] for g in good])
                hits = np.array([g.pattern_ok[k] for g in good], dtype=np.float64)
                errs = np.array([g.sq_error[k] for g in good])
                mean_err = float(errs.mean())
                cell = SweepCell(
                    n=n,
                    grid_index=k,
                    log10_ratio=float(ratio),
                    mean_reg=float(regs.mean()),
                    pattern_freq=float(hits.mean()),
                    log_mse=float(np.log10(mean_err)) if mean_err > 0 else float("-inf"),
                    ok=len(good),
                    failures=failures,
                )
            else:
                cell = SweepCell(
                    n=n,
                    grid_index=k,
                    log10_ratio=float(ratio),
                    mean_reg=float("nan"),
                    pattern_freq=float("nan"),
                    log_mse=float("nan"),
                    ok=0,
                    failures=failures,
                )
            cells.append(cell)
    return tuple(cells), tuple(messages)


async def run_sweep(
    config: ExperimentConfig,
    *,
    stop_fn: Callable[[], bool] = lambda: False,
    metrics: MetricsPort | None = None,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> ExperimentResult:
    """Draw the scenario's model, run every replication and aggregate per cell.

    Failed replications are excluded from their cells and counted.
    """
    jobs: list[Callable[[], _Replication]] = []
    owners: list[int] = []
    labels: list[str] = []

    if config.scenario is Scenario.NONPARAMETRIC:
        npm = gen_nonparametric_model(config.seed, numerics=numerics)
        attempts = npm.attempt + 1
        condition_max = nonparametric_condition(npm, numerics).max_value
        mus = config.mu_max * 10.0 ** config.grid.log10_ratios()
        for ni, n in enumerate(config.n_grid):
            for r in range(config.replications):
                jobs.append(
                    partial(
                        _nonparametric_replication, npm, n, mus, config.adaptive_gamma, config.seed, (ni, r), numerics
                    )
                )
                owners.append(ni)
                labels.append(f"n={n}")
    else:
        target = config.scenario.target
        if target is None:
            raise ValueError(f"scenario {config.scenario} has no finite target verdict")
        conditioned: ConditionedModel = gen_finite_model_conditioned(config.seed, target, numerics=numerics)
        fm = conditioned.finite
        attempts = conditioned.attempts
        condition_max = conditioned.report.max_value
        for ni, n in enumerate(config.n_grid):
            for r in range(config.replications):
                jobs.append(
                    partial(
                        _finite_replication,
                        fm.model,
                        fm.blocks,
                        fm.pattern,
                        n,
                        config.grid,
                        config.adaptive_gamma,
                        config.seed,
                        (ni, r),
                        numerics,
                    )
                )
                owners.append(ni)
                labels.append(f"n={n}")

    logger.info(f"Sweep {config.scenario}: {len(jobs)} replications on {config.max_workers} workers")
    outcomes = await run_replications(
        jobs, stop_fn, max_workers=config.max_workers, metrics=metrics, labels=labels
    )
    cells, messages = _aggregate(config, outcomes, owners)
    return ExperimentResult(
        config=config,
        cells=cells,
        condition_max=float(condition_max),
        attempts=attempts,
        failure_messages=messages,
    )


def pattern_frequency(
    model: PopulationModel,
    blocks: BlockStructure,
    pattern: SparsityPattern,
    n: int,
    reg: float,
    reps: int,
    seed: int,
    *,
    adaptive_gamma: float | None = None,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> PatternProbability:
    """Empirical frequency of selecting J at one fixed λ over ``reps`` datasets."""
    if reps < 1:
        raise ValueError(f"reps must be at least 1 (got {reps})")
    hits = 0
    for r in range(reps):
        mom = empirical_moments(sample_dataset(model, n, stream(seed, r)), blocks)
        used = blocks
        if adaptive_gamma is not None:
            used = blocks.with_weights(adaptive_weights(ols(mom), blocks, adaptive_gamma))
        sol = solve_fixed_lambda(mom, used, reg, numerics=numerics)
        hits += sol.pattern == pattern
    freq = hits / reps
    return PatternProbability(estimate=freq, std_error=float(np.sqrt(freq * (1 - freq) / reps)), draws=reps)


@dataclass(slots=True, frozen=True)
class PathClassification:
    """Outcome of one sampled model: its condition value and path class (1, 2 or 3)."""

    model_index: int
    condition_max: float
    path_class: int


@dataclass(slots=True, frozen=True)
class ClassificationResult:
    """Per-model classes and the class histogram over log10 condition bins.

    Attributes:
        models: One entry per successfully classified model.
        bin_edges: Edges of the log10 condition bins (values outside go to the end bins).
        counts: Array (bins, 3) of class counts.
        failures: Models whose path could not be computed.
    """

    models: tuple[PathClassification, ...]
    bin_edges: FloatArray
    counts: NDArray[np.int64]
    failures: int

    def proportions(self) -> FloatArray:
        """Class shares per non-empty bin; every row sums to 1."""
        totals = self.counts.sum(axis=1, keepdims=True)
        keep = totals[:, 0] > 0
        return self.counts[keep] / totals[keep]


def _classify_one(
    index: int, seed: int, n: int, grid: SweepGrid, threshold: float, numerics: NumericsPort
) -> PathClassification:
    fm = gen_finite_model(derive_seed(seed, index))
    report = condition_value(fm.model, fm.blocks, fm.pattern, numerics=numerics)
    mom = empirical_moments(sample_dataset(fm.model, n, stream(seed, index, 1)), fm.blocks)
    path = regularization_path(mom, fm.blocks, grid.as_grid_spec(), numerics=numerics)
    consistent = [sol for sol in path.solutions if sol.pattern == fm.pattern]
    if not consistent:
        path_class = 3
    elif any(float(np.linalg.norm(sol.w - fm.model.w)) <= threshold for sol in consistent):
        path_class = 1
    else:
        path_class = 2
    return PathClassification(model_index=index, condition_max=report.max_value, path_class=path_class)


def _bin_of(value: float, edges: FloatArray) -> int:
    log_value = np.log10(value) if value > 0 else -np.inf
    return int(np.clip(np.searchsorted(edges, log_value, side="right") - 1, 0, len(edges) - 2))


async def classify_paths(
    count: int,
    seed: int,
    *,
    n: int = CLASS_N,
    grid: SweepGrid = SweepGrid(),
    threshold: float = CLASS_ERROR_THRESHOLD,
    max_workers: int = 4,
    stop_fn: Callable[[], bool] = lambda: False,
    metrics: MetricsPort | None = None,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> ClassificationResult:
    """Classify the λ paths of ``count`` random models.

    Class 1: some grid point selects J with ‖ŵ − w‖ ≤ threshold; class 2: J is
    selected but never that accurately; class 3: J is never selected.
    """
    if count < 1:
        raise ValueError(f"count must be at least 1 (got {count})")
    jobs = [partial(_classify_one, c, seed, n, grid, threshold, numerics) for c in range(count)]
    outcomes = await run_replications(jobs, stop_fn, max_workers=max_workers, metrics=metrics)
    models = tuple(o.value for o in outcomes if o.ok and o.value is not None)
    edges = np.asarray(CLASS_BIN_EDGES, dtype=np.float64)
    counts = np.zeros((len(edges) - 1, 3), dtype=np.int64)
    for item in models:
        counts[_bin_of(item.condition_max, edges), item.path_class - 1] += 1
    return ClassificationResult(models=models, bin_edges=edges, counts=counts, failures=count - len(models))


