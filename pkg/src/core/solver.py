"""Finite-dimensional group Lasso solvers and optimality certificates.

Two equivalent formulations are supported:

- the λ form, ``½Σ̂_YY − Σ̂_XYᵀw + ½wᵀΣ̂_XXw + λ Σ_j d_j‖w_j‖``;
- the squared form, where the penalty is ``½μ (Σ_j d_j‖w_j‖)²``.

Both are solved by block coordinate descent on the λ form; the squared form
is reduced to it through λ = μ Σ_j d_j‖w_j‖.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from numpy.typing import NDArray
from scipy import linalg, optimize

from src.core.errors import (
    ConditionUndefinedError,
    ConvergenceError,
    DimensionMismatchError,
    GroupLassoError,
    NotPositiveSemidefiniteError,
    SingularMatrixError,
)
from src.core.model import (
    BlockStructure,
    EmpiricalMoments,
    PopulationModel,
    SparsityPattern,
    eta_profile,
    intercept_of,
    pattern_of,
    relative_pattern,
)
from src.ports.settings import DEFAULT_NUMERICS, NumericsPort

__all__ = [
    "Formulation",
    "GroupLassoSolution",
    "KktReport",
    "GridSpec",
    "PathResult",
    "lambda_max",
    "objective",
    "solve_fixed_lambda",
    "solve_fixed_mu",
    "check_kkt",
    "check_kkt_squared",
    "regularization_path",
    "ols",
    "adaptive_weights",
    "adaptive_group_lasso",
    "population_group_lasso",
    "population_path",
    "exact_pattern",
]

logger = logging.getLogger(__name__)

OLS_MIN_EIGENVALUE = 1e-12
MONOTONE_SLACK = 1e-9
PSD_SLACK = 1e-10

FloatArray = NDArray[np.float64]


class Formulation(StrEnum):
    LAMBDA = "lambda"
    MU = "mu"


@dataclass(slots=True, frozen=True)
class GroupLassoSolution:
    """Certified solution of one group Lasso problem.

    Attributes:
        w: Loading vector.
        intercept: b̂ = mean(y) − mean(x)ᵀŵ.
        reg: Regularization value (λ or μ, see ``form``).
        form: Which formulation ``reg`` belongs to.
        pattern: Active groups (relative threshold on ‖ŵ‖).
        kkt_residual: Optimality residual of the returned point.
        iterations: Block sweeps (summed over inner solves for the squared form).
        weights: Penalty weights the problem was solved with.
    """

    w: FloatArray
    intercept: float
    reg: float
    form: Formulation
    pattern: SparsityPattern
    kkt_residual: float
    iterations: int
    weights: tuple[float, ...]


@dataclass(slots=True, frozen=True)
class KktReport:
    """Per-group optimality slack; the residual is their maximum."""

    residual: float
    slacks: tuple[float, ...]
    active: tuple[bool, ...]


@dataclass(slots=True, frozen=True)
class GridSpec:
    """Decreasing logarithmic grid from λ_max down to min_ratio·λ_max."""

    points: int = 100
    min_ratio: float = 1e-3

    def __post_init__(self) -> None:
        if self.points < 1:
            raise ValueError(f"grid needs at least one point (got {self.points})")
        if not 0 < self.min_ratio <= 1:
            raise ValueError(f"min_ratio must lie in (0, 1] (got {self.min_ratio})")

    def values(self, top: float) -> FloatArray:
        if self.points == 1:
            return np.array([top])
        return top * np.logspace(0.0, np.log10(self.min_ratio), self.points)


@dataclass(slots=True, frozen=True)
class PathResult:
    """Solutions along a decreasing regularization grid.

    Attributes:
        grid: Regularization values, decreasing.
        solutions: One certified solution per grid value.
        eta_profiles: Array (points, m) of normalized group magnitudes.
    """

    grid: FloatArray
    solutions: tuple[GroupLassoSolution, ...]
    eta_profiles: FloatArray


def _check_dims(mom: EmpiricalMoments, blocks: BlockStructure) -> None:
    if mom.s_xy.shape[0] != blocks.p:
        raise DimensionMismatchError("p", blocks.p, int(mom.s_xy.shape[0]), "moments")
    if mom.s_xx.shape != (blocks.p, blocks.p):
        raise DimensionMismatchError("p", blocks.p, int(mom.s_xx.shape[0]), "s_xx")


def _check_psd(s_xx: FloatArray) -> None:
    if not s_xx.size:
        return
    scale = max(1.0, float(np.max(np.abs(np.diag(s_xx)))))
    min_eig = float(np.linalg.eigvalsh(s_xx)[0])
    if min_eig < -PSD_SLACK * scale:
        raise NotPositiveSemidefiniteError("s_xx", min_eig)


def lambda_max(mom: EmpiricalMoments, blocks: BlockStructure) -> float:
    """Smallest λ at which ŵ = 0: max_j ‖s_xy,j‖ / d_j."""
    _check_dims(mom, blocks)
    return float(np.max(blocks.norms(np.asarray(mom.s_xy)) / blocks.d))


def objective(mom: EmpiricalMoments, blocks: BlockStructure, w: FloatArray, lam: float) -> float:
    """Value of the λ-form objective at w."""
    quad = 0.5 * mom.s_yy - float(mom.s_xy @ w) + 0.5 * float(w @ mom.s_xx @ w)
    return quad + lam * float(blocks.d @ blocks.norms(w))


def _kkt_slacks(
    gradient: FloatArray, w: FloatArray, blocks: BlockStructure, thresholds: FloatArray
) -> KktReport:
    slacks: list[float] = []
    active: list[bool] = []
    for j in range(blocks.m):
        span = blocks.span(j)
        g_j = gradient[span]
        w_j = w[span]
        norm_w = float(np.linalg.norm(w_j))
        if norm_w > 0.0:
            slacks.append(float(np.linalg.norm(g_j + thresholds[j] * w_j / norm_w)))
            active.append(True)
        else:
            slacks.append(max(0.0, float(np.linalg.norm(g_j)) - float(thresholds[j])))
            active.append(False)
    return KktReport(residual=max(slacks), slacks=tuple(slacks), active=tuple(active))


def check_kkt(
    mom: EmpiricalMoments, blocks: BlockStructure, w: FloatArray, lam: float
) -> KktReport:
    """Optimality residual of w for the λ form.

    Inactive groups contribute max(0, ‖Σ̂_{X_jX}w − Σ̂_{X_jY}‖ − λd_j); active
    groups contribute ‖Σ̂_{X_jX}w − Σ̂_{X_jY} + λd_j w_j/‖w_j‖‖.
    """
    _check_dims(mom, blocks)
    w = np.asarray(w, dtype=np.float64)
    blocks.check_length(w, "w")
    gradient = mom.s_xx @ w - mom.s_xy
    return _kkt_slacks(gradient, w, blocks, lam * blocks.d)


def check_kkt_squared(
    mom: EmpiricalMoments, blocks: BlockStructure, w: FloatArray, mu: float
) -> KktReport:
    """Optimality residual of w for the squared form.

    Same as check_kkt with the threshold μ d_j Σ_i d_i‖w_i‖.
    """
    _check_dims(mom, blocks)
    w = np.asarray(w, dtype=np.float64)
    blocks.check_length(w, "w")
    total = float(blocks.d @ blocks.norms(w))
    gradient = mom.s_xx @ w - mom.s_xy
    return _kkt_slacks(gradient, w, blocks, mu * total * blocks.d)


def _block_update(
    eigvals: FloatArray, eigvecs: FloatArray, r: FloatArray, threshold: float
) -> FloatArray:
    """Exact minimizer of ½vᵀAv − rᵀv + threshold·‖v‖ given A = V diag(e) Vᵀ.

    A nonzero minimizer is v = (A + νI)⁻¹r where ν > 0 solves
    ν‖(A + νI)⁻¹r‖ = threshold; the left side increases with ν.
    """
    norm_r = float(np.linalg.norm(r))
    if norm_r <= threshold:
        return np.zeros_like(r)
    r_rot = eigvecs.T @ r
    vals = np.maximum(eigvals, 0.0)
    top = float(vals.max())
    if top <= 0.0:
        raise SingularMatrixError("diagonal block of s_xx", top, "block subproblem is unbounded")

    def excess(nu: float) -> float:
        return nu * float(np.linalg.norm(r_rot / (vals + nu))) - threshold

    hi = 2.0 * threshold * top / (norm_r - threshold) + np.finfo(float).tiny
    while excess(hi) <= 0.0:
        hi *= 2.0
    lo = 0.0 if vals.min() > 0.0 else hi * 1e-16
    if lo > 0.0 and excess(lo) >= 0.0:
        raise SingularMatrixError(
            "diagonal block of s_xx", float(vals.min()), "block subproblem is unbounded"
        )
    nu = optimize.brentq(excess, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return eigvecs @ (r_rot / (vals + nu))


def _solution(
    mom: EmpiricalMoments,
    blocks: BlockStructure,
    w: FloatArray,
    reg: float,
    form: Formulation,
    residual: float,
    iterations: int,
    numerics: NumericsPort,
) -> GroupLassoSolution:
    w = np.array(w, dtype=np.float64)
    w.setflags(write=False)
    return GroupLassoSolution(
        w=w,
        intercept=intercept_of(mom, w),
        reg=float(reg),
        form=form,
        pattern=relative_pattern(w, blocks, numerics.pattern_rel_tol),
        kkt_residual=float(residual),
        iterations=iterations,
        weights=blocks.weights,
    )


def ols(mom: EmpiricalMoments) -> FloatArray:
    """Unregularized least-squares loadings s_xx⁻¹ s_xy.

    Raises:
        SingularMatrixError: If the smallest eigenvalue of s_xx is ≤ 1e-12.
    """
    min_eig = float(np.linalg.eigvalsh(mom.s_xx)[0])
    if min_eig <= OLS_MIN_EIGENVALUE:
        raise SingularMatrixError("s_xx", min_eig, "least squares needs an invertible covariance")
    return np.asarray(linalg.solve(mom.s_xx, mom.s_xy, assume_a="pos"), dtype=np.float64)


def solve_fixed_lambda(
    mom: EmpiricalMoments,
    blocks: BlockStructure,
    lam: float,
    *,
    w0: FloatArray | None = None,
    tol: float | None = None,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> GroupLassoSolution:
    """Solve the λ-form group Lasso by exact block coordinate descent.

    Args:
        mom: Empirical (or population) moments.
        blocks: Group partition and weights.
        lam: Regularization λ ≥ 0.
        w0: Optional warm start.
        tol: KKT residual to reach (defaults to ``numerics.kkt_tol``).
        numerics: Tolerances and iteration caps.

    Returns:
        Solution whose KKT residual is ≤ tol.

    Raises:
        NotPositiveSemidefiniteError: If s_xx is indefinite.
        SingularMatrixError: For λ = 0 with singular s_xx.
        ConvergenceError: If the sweep cap is reached; carries the last residual.
    """
    if lam < 0:
        raise ValueError(f"lambda must be non-negative (got {lam})")
    _check_dims(mom, blocks)
    _check_psd(mom.s_xx)
    tol = numerics.kkt_tol if tol is None else tol

    if lam == 0.0:
        w = ols(mom)
        report = check_kkt(mom, blocks, w, 0.0)
        return _solution(mom, blocks, w, 0.0, Formulation.LAMBDA, report.residual, 0, numerics)
    if lam >= lambda_max(mom, blocks):
        w = np.zeros(blocks.p)
        report = check_kkt(mom, blocks, w, lam)
        return _solution(mom, blocks, w, lam, Formulation.LAMBDA, report.residual, 0, numerics)

    s_xx = np.asarray(mom.s_xx)
    thresholds = lam * blocks.d
    eig = [np.linalg.eigh(s_xx[blocks.span(j), blocks.span(j)]) for j in range(blocks.m)]

    w = np.zeros(blocks.p) if w0 is None else np.array(w0, dtype=np.float64)
    blocks.check_length(w, "w0")
    gradient = s_xx @ w - mom.s_xy
    report = _kkt_slacks(gradient, w, blocks, thresholds)
    previous = objective(mom, blocks, w, lam)

    sweeps = 0
    while report.residual > tol:
        if sweeps >= numerics.max_sweeps:
            raise ConvergenceError("block coordinate descent", report.residual, sweeps)
        for j in range(blocks.m):
            span = blocks.span(j)
            old = w[span].copy()
            vals, vecs = eig[j]
            r = s_xx[span, span] @ old - gradient[span]
            new = _block_update(vals, vecs, r, float(thresholds[j]))
            delta = new - old
            if np.any(delta):
                w[span] = new
                gradient += s_xx[:, span] @ delta
        sweeps += 1

        current = objective(mom, blocks, w, lam)
        if current > previous + MONOTONE_SLACK * (1.0 + abs(previous)):
            raise ConvergenceError("block coordinate descent (objective increased)", current - previous, sweeps)
        previous = current
        report = _kkt_slacks(gradient, w, blocks, thresholds)

    logger.debug(f"solve_fixed_lambda: lambda={lam:.4g} sweeps={sweeps} residual={report.residual:.2e}")
    return _solution(mom, blocks, w, lam, Formulation.LAMBDA, report.residual, sweeps, numerics)


def solve_fixed_mu(
    mom: EmpiricalMoments,
    blocks: BlockStructure,
    mu: float,
    *,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> GroupLassoSolution:
    """Solve the squared-norm formulation.

    The optimum is the λ-form solution at the unique λ with
    λ = μ Σ_i d_i‖ŵ_i(λ)‖; the left side increases and the right side
    decreases with λ, so the root is bracketed by [0, λ_max].

    Raises:
        ConvergenceError: If the final point fails the squared-form KKT check.
    """
    if mu < 0:
        raise ValueError(f"mu must be non-negative (got {mu})")
    _check_dims(mom, blocks)
    if mu == 0.0:
        sol = solve_fixed_lambda(mom, blocks, 0.0, numerics=numerics)
        return _solution(
            mom, blocks, sol.w, 0.0, Formulation.MU, sol.kkt_residual, sol.iterations, numerics
        )

    top = lambda_max(mom, blocks)
    if top == 0.0:
        return _solution(mom, blocks, np.zeros(blocks.p), mu, Formulation.MU, 0.0, 0, numerics)

    inner_tol = 1e-2 * numerics.kkt_tol
    cache: dict[float, GroupLassoSolution] = {}
    sweeps = 0

    def solve_at(lam: float) -> GroupLassoSolution:
        nonlocal sweeps
        if lam not in cache:
            warm = min(cache.items(), key=lambda kv: abs(kv[0] - lam))[1].w if cache else None
            cache[lam] = solve_fixed_lambda(mom, blocks, lam, w0=warm, tol=inner_tol, numerics=numerics)
            sweeps += cache[lam].iterations
        return cache[lam]

    def balance(lam: float) -> float:
        w = solve_at(lam).w
        return lam - mu * float(blocks.d @ blocks.norms(w))

    lo = top * 1e-3
    while balance(lo) >= 0.0:
        lo *= 1e-3
        if lo < top * 1e-300:
            raise ConvergenceError("squared-form bracketing", lo, len(cache))
    lam_star = optimize.brentq(balance, lo, top, xtol=1e-15 * top, rtol=4 * np.finfo(float).eps, maxiter=500)
    w = solve_at(lam_star).w
    report = check_kkt_squared(mom, blocks, w, mu)
    if report.residual > numerics.kkt_tol:
        raise ConvergenceError("squared-form solve", report.residual, sweeps)
    logger.debug(f"solve_fixed_mu: mu={mu:.4g} lambda={lam_star:.6g} inner solves={len(cache)}")
    return _solution(mom, blocks, w, mu, Formulation.MU, report.residual, sweeps, numerics)


def regularization_path(
    mom: EmpiricalMoments,
    blocks: BlockStructure,
    grid_spec: GridSpec = GridSpec(),
    *,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> PathResult:
    """Warm-started λ path from λ_max down to grid_spec.min_ratio·λ_max.

    Solver errors are re-raised with the failing grid index attached as a note.
    """
    grid = grid_spec.values(lambda_max(mom, blocks))
    solutions: list[GroupLassoSolution] = []
    w = np.zeros(blocks.p)
    for k, lam in enumerate(grid):
        try:
            sol = solve_fixed_lambda(mom, blocks, float(lam), w0=w, numerics=numerics)
        except GroupLassoError as exc:
            exc.add_note(f"regularization path: grid index {k}, lambda={lam:.6g}")
            raise
        solutions.append(sol)
        w = np.array(sol.w)
    profiles = np.vstack([eta_profile(s.w, blocks) for s in solutions])
    return PathResult(grid=grid, solutions=tuple(solutions), eta_profiles=profiles)


def adaptive_weights(w_ls: FloatArray, blocks: BlockStructure, gamma: float) -> FloatArray:
    """d_j = ‖ŵ^LS_j‖^(−γ).

    Raises:
        ConditionUndefinedError: If some least-squares group norm is exactly zero.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative (got {gamma})")
    norms = blocks.norms(np.asarray(w_ls, dtype=np.float64))
    zero = [j for j in range(blocks.m) if norms[j] == 0.0]
    if zero:
        raise ConditionUndefinedError(f"least-squares estimate vanishes on groups {zero}")
    return np.asarray(norms ** (-gamma), dtype=np.float64)


def adaptive_group_lasso(
    mom: EmpiricalMoments,
    blocks: BlockStructure,
    mu: float,
    gamma: float,
    *,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> GroupLassoSolution:
    """Squared-form solve with weights ‖ŵ^LS_j‖^(−γ) from the OLS estimate."""
    weights = adaptive_weights(ols(mom), blocks, gamma)
    return solve_fixed_mu(mom, blocks.with_weights(weights), mu, numerics=numerics)


def population_group_lasso(
    model: PopulationModel,
    blocks: BlockStructure,
    lambda0: float,
    *,
    w0: FloatArray | None = None,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> GroupLassoSolution:
    """Minimize ½(w − w̄)ᵀΣ(w − w̄) + λ₀ Σ_j d_j‖w_j‖."""
    if lambda0 <= 0:
        raise ValueError(f"lambda0 must be positive (got {lambda0})")
    mom = EmpiricalMoments.from_population(model)
    return solve_fixed_lambda(mom, blocks, lambda0, w0=w0, numerics=numerics)


def population_path(
    model: PopulationModel,
    blocks: BlockStructure,
    grid_spec: GridSpec = GridSpec(points=200, min_ratio=1e-4),
    *,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> PathResult:
    """Regularization path of the population problem."""
    return regularization_path(
        EmpiricalMoments.from_population(model), blocks, grid_spec, numerics=numerics
    )


def exact_pattern(w: FloatArray, blocks: BlockStructure) -> SparsityPattern:
    """Groups that are exactly nonzero (solver outputs carry exact zeros)."""
    return pattern_of(w, blocks, 0.0)
