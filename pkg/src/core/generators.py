"""Random synthetic models for the finite and kernel experiments."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from numpy.typing import NDArray

from src.core.consistency import (
    ConditionReport,
    Verdict,
    condition_value,
    population_pattern_window,
    refined_condition,
)
from src.core.errors import AttemptsExhaustedError, DegenerateDrawError
from src.core.gaussian import (
    TruncatedOperatorModel,
    analytic_condition,
    eigenfunction_values,
    function_covariance,
    operator_model,
    range_projection,
)
from src.core.model import BlockStructure, Dataset, PopulationModel, SparsityPattern
from src.core.retry import retry
from src.core.rng import derive_seed, stream
from src.ports.settings import DEFAULT_NUMERICS, NumericsPort

__all__ = [
    "TargetVerdict",
    "FiniteModel",
    "ConditionedModel",
    "NonparametricModel",
    "gen_finite_model",
    "gen_finite_model_conditioned",
    "gen_nonparametric_model",
    "nonparametric_condition",
    "additive_function",
    "sample_nonparametric",
]

logger = logging.getLogger(__name__)

MIN_EIGENVALUE = 1e-10
NOISE_SHARE = 0.2
LOADING_RANGE = (1.0 / 3.0, 1.0)
FUNCTION_COEFFS = 10

FloatArray = NDArray[np.float64]


class TargetVerdict(StrEnum):
    STRICT = "strict"
    VIOLATED_NO_REFINE = "violated-no-refine"
    VIOLATED_REFINED = "violated-refined"


@dataclass(slots=True, frozen=True)
class FiniteModel:
    model: PopulationModel
    blocks: BlockStructure
    pattern: SparsityPattern
    seed: int
    attempt: int


@dataclass(slots=True, frozen=True)
class ConditionedModel:
    """A finite model accepted by rejection sampling for a target verdict."""

    finite: FiniteModel
    target: TargetVerdict
    report: ConditionReport
    attempts: int


@dataclass(slots=True, frozen=True)
class NonparametricModel:
    """Additive model Y = Σ_j f_j(X_j) + ε with Gaussian kernels and inputs.

    Attributes:
        op: Truncated operator model of the inputs (carries S and the eigen-systems).
        f_coords: Coefficients of each f_j on its first eigenfunctions; zero for j ∉ J.
        pattern: Groups with a nonzero function.
        sigma: Noise standard deviation.
        seed: Seed the model was drawn from.
        attempt: Redraw index that produced it.
    """

    op: TruncatedOperatorModel
    f_coords: tuple[FloatArray, ...]
    pattern: SparsityPattern
    sigma: float
    seed: int
    attempt: int

    @property
    def m(self) -> int:
        return self.op.m

    @property
    def bandwidths(self) -> FloatArray:
        return np.array([sys.b for sys in self.op.systems])


def _random_covariance(rng: np.random.Generator, p: int) -> FloatArray:
    g = rng.standard_normal((p, p))
    return g @ g.T


@retry(times=20)
def gen_finite_model(
    seed: int,
    m: int = 4,
    group_size: int = 2,
    card_j: int = 2,
    *,
    attempt: int = 0,
) -> FiniteModel:
    """Draw a random finite model.

    Σ = GGᵀ with standard normal G, rescaled so every diagonal block has unit
    trace. J has ``card_j`` groups chosen uniformly; each active loading is a
    uniform direction with norm uniform in [1/3, 1]. The noise level is
    0.2·(E(wᵀX)²)^(1/2) and the intercept is zero.

    Raises:
        DegenerateDrawError: If Σ is numerically singular (the draw is retried).
    """
    if not 1 <= card_j <= m:
        raise ValueError(f"card_j must lie in [1, {m}] (got {card_j})")
    rng = stream(seed, attempt)
    blocks = BlockStructure.uniform(m, group_size)
    sigma = _random_covariance(rng, blocks.p)
    scale = np.ones(blocks.p)
    for j in range(m):
        span = blocks.span(j)
        scale[span] = 1.0 / np.sqrt(np.trace(sigma[span, span]))
    sigma = sigma * np.outer(scale, scale)
    sigma = 0.5 * (sigma + sigma.T)
    min_eig = float(np.linalg.eigvalsh(sigma)[0])
    if min_eig < MIN_EIGENVALUE:
        raise DegenerateDrawError(f"covariance draw is nearly singular (min eigenvalue {min_eig:.2e})")

    active = sorted(int(j) for j in rng.choice(m, size=card_j, replace=False))
    w = np.zeros(blocks.p)
    for j in active:
        direction = rng.standard_normal(group_size)
        w[blocks.span(j)] = direction / np.linalg.norm(direction) * rng.uniform(*LOADING_RANGE)
    noise = NOISE_SHARE * float(np.sqrt(w @ sigma @ w))
    model = PopulationModel(sigma_xx=sigma, w=w, b=0.0, sigma=noise)
    return FiniteModel(model=model, blocks=blocks, pattern=SparsityPattern.of(active), seed=seed, attempt=attempt)


def _accepts(fm: FiniteModel, target: TargetVerdict, margin: float, numerics: NumericsPort) -> ConditionReport | None:
    report = condition_value(fm.model, fm.blocks, fm.pattern, numerics=numerics)
    if target is TargetVerdict.STRICT:
        return report if report.max_value < 1.0 - max(margin, numerics.boundary_tol) else None
    if report.verdict is not Verdict.VIOLATED or report.max_value <= 1.0 + margin:
        return None
    window = population_pattern_window(fm.model, fm.blocks, fm.pattern, numerics=numerics)
    if target is TargetVerdict.VIOLATED_NO_REFINE:
        return report if not window else None
    if not window:
        return None
    refined = refined_condition(fm.model, fm.blocks, fm.pattern, include_violating=True, numerics=numerics)
    return report if any(v > 0.0 for v in refined.values()) else None


def gen_finite_model_conditioned(
    seed: int,
    target: TargetVerdict,
    *,
    margin: float = 0.0,
    max_attempts: int | None = None,
    m: int = 4,
    group_size: int = 2,
    card_j: int = 2,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> ConditionedModel:
    """Rejection-sample finite models until the consistency verdict matches.

    - strict: condition max below 1 − margin;
    - violated-no-refine: max above 1 + margin and no λ₀ on the population
      path recovers J;
    - violated-refined: max above 1 + margin, some population λ₀ recovers J
      and the refined value is positive at a violating group.

    Candidate a is drawn from the root seed derive_seed(seed, a).

    Raises:
        AttemptsExhaustedError: After ``max_attempts`` rejected candidates.
    """
    max_attempts = numerics.max_attempts if max_attempts is None else max_attempts
    for attempt in range(max_attempts):
        fm = gen_finite_model(derive_seed(seed, attempt), m, group_size, card_j)
        report = _accepts(fm, target, margin, numerics)
        if report is not None:
            logger.info(f"{target} model accepted after {attempt + 1} attempts (max value {report.max_value:.4f})")
            return ConditionedModel(finite=fm, target=target, report=report, attempts=attempt + 1)
    raise AttemptsExhaustedError(f"conditioned model generation ({target})", max_attempts)


@retry(times=20)
def gen_nonparametric_model(
    seed: int,
    m: int = 4,
    card_j: int = 2,
    *,
    truncation: int | None = None,
    numerics: NumericsPort = DEFAULT_NUMERICS,
    attempt: int = 0,
) -> NonparametricModel:
    """Draw a random additive Gaussian-kernel model.

    S = GGᵀ rescaled to unit diagonal, bandwidths 1. Each active f_j has
    coefficients N(0, 1)·λ_k^(1/2) on its first 10 eigenfunctions, projected
    so that it satisfies the range condition. The noise level is 0.2 times
    the standard deviation of Σ_j f_j(X_j).
    """
    if not 1 <= card_j <= m:
        raise ValueError(f"card_j must lie in [1, {m}] (got {card_j})")
    truncation = numerics.truncation if truncation is None else truncation
    rng = stream(seed, attempt)
    s = _random_covariance(rng, m)
    scale = 1.0 / np.sqrt(np.diag(s))
    s = s * np.outer(scale, scale)
    s = 0.5 * (s + s.T)
    np.fill_diagonal(s, 1.0)
    min_eig = float(np.linalg.eigvalsh(s)[0])
    if min_eig < MIN_EIGENVALUE:
        raise DegenerateDrawError(f"input covariance draw is nearly singular (min eigenvalue {min_eig:.2e})")

    op = operator_model(s, np.ones(m), truncation, margin=numerics.quadrature_margin)
    active = sorted(int(j) for j in rng.choice(m, size=card_j, replace=False))
    coords: list[FloatArray] = []
    for j in range(m):
        if j not in active:
            coords.append(np.zeros(FUNCTION_COEFFS))
            continue
        sys = op.systems[j]
        raw = rng.standard_normal(FUNCTION_COEFFS) * np.sqrt(sys.eigenvalues[:FUNCTION_COEFFS])
        projected = range_projection(sys, raw)
        if np.linalg.norm(projected) < MIN_EIGENVALUE:
            raise DegenerateDrawError(f"function of group {j} vanished after projection")
        coords.append(projected)
    noise = NOISE_SHARE * float(np.sqrt(max(function_covariance(op, coords), 0.0)))
    for c in coords:
        c.setflags(write=False)
    return NonparametricModel(
        op=op,
        f_coords=tuple(coords),
        pattern=SparsityPattern.of(active),
        sigma=noise,
        seed=seed,
        attempt=attempt,
    )


def nonparametric_condition(npm: NonparametricModel, numerics: NumericsPort = DEFAULT_NUMERICS) -> ConditionReport:
    """Closed-form kernel condition of the model with unit weights."""
    return analytic_condition(
        npm.op.s,
        npm.bandwidths,
        np.ones(npm.m),
        npm.pattern,
        list(npm.f_coords),
        npm.op.truncation,
        numerics=numerics,
        op=npm.op,
    )


def additive_function(npm: NonparametricModel, x: FloatArray) -> FloatArray:
    """Σ_j f_j(x_j) for the rows of x (n, m)."""
    x = np.asarray(x, dtype=np.float64)
    total = np.zeros(x.shape[0])
    for j, coords in enumerate(npm.f_coords):
        if not np.any(coords):
            continue
        values = eigenfunction_values(npm.op.systems[j], x[:, j])
        total += values[:, : coords.shape[0]] @ coords
    return total


def sample_nonparametric(npm: NonparametricModel, n: int, rng: np.random.Generator) -> Dataset:
    """Draw X ~ N(0, S) and Y = Σ_j f_j(X_j) + ε with ε ~ N(0, σ²)."""
    chol = np.linalg.cholesky(npm.op.s)
    x = rng.standard_normal((n, npm.m)) @ chol.T
    y = additive_function(npm, x) + npm.sigma * rng.standard_normal(n)
    return Dataset(x=x, y=y)


