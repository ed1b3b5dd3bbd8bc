"""Population consistency quantities of the group Lasso.

Every function takes the true model (Σ_XX, w) together with a candidate
pattern J and evaluates, for the inactive groups i ∈ Jᶜ, how strongly they are
correlated with the active ones:

- condition_value: the loading-dependent condition and its verdict;
- refined_condition: the second-order refinement used at the boundary;
- loading_free_condition: the worst case over all loading directions,
  sandwiched between a multi-start lower bound and two upper bounds;
- pattern_probability_limit: the limiting probability of selecting J when
  λ_n = λ₀ n^(-1/2).
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
    NotPositiveSemidefiniteError,
    SingularMatrixError,
)
from src.core.model import BlockStructure, PopulationModel, SparsityPattern
from src.core.rng import stream
from src.core.solver import GridSpec, population_path
from src.ports.settings import DEFAULT_NUMERICS, NumericsPort

__all__ = [
    "Verdict",
    "ConditionReport",
    "LoadingFreeBound",
    "SdpCertificate",
    "PatternProbability",
    "condition_value",
    "refined_condition",
    "loading_free_condition",
    "spectral_upper_bound",
    "solve_block_sdp",
    "sdp_upper_bound",
    "pattern_probability_limit",
    "population_pattern_window",
]

logger = logging.getLogger(__name__)

SINGULAR_TOL = 1e-12
CONDITIONAL_PSD_TOL = 1e-8
MC_CHUNK = 10_000
POWER_MAX_ITER = 10_000
POWER_REL_TOL = 1e-13

FloatArray = NDArray[np.float64]


class Verdict(StrEnum):
    STRICT_HOLDS = "StrictHolds"
    WEAK_BOUNDARY = "WeakBoundary"
    VIOLATED = "Violated"

    @classmethod
    def classify(cls, max_value: float, boundary_tol: float) -> Verdict:
        if max_value < 1.0 - boundary_tol:
            return cls.STRICT_HOLDS
        if max_value > 1.0 + boundary_tol:
            return cls.VIOLATED
        return cls.WEAK_BOUNDARY


@dataclass(slots=True, frozen=True)
class ConditionReport:
    """Per-group condition values for i ∈ Jᶜ with their maximum and verdict."""

    per_group_values: dict[int, float]
    max_value: float
    verdict: Verdict


@dataclass(slots=True, frozen=True)
class LoadingFreeBound:
    """Interval enclosing the loading-free condition.

    Attributes:
        value: Best value found by multi-start ascent (a lower bound).
        per_group: Lower bound for every i ∈ Jᶜ.
        spectral: Block spectral-norm upper bound.
        sdp: Semidefinite relaxation upper bound (max over i).
    """

    value: float
    per_group: dict[int, float]
    spectral: float
    sdp: float


@dataclass(slots=True, frozen=True)
class SdpCertificate:
    """Bracket [lower, upper] on min Σλ_b subject to blockdiag(λ_b I) ⪰ A."""

    lower: float
    upper: float
    multipliers: FloatArray
    iterations: int

    @property
    def gap(self) -> float:
        return self.upper - self.lower


@dataclass(slots=True, frozen=True)
class PatternProbability:
    estimate: float
    std_error: float
    draws: int


@dataclass(slots=True, frozen=True)
class _ActiveSystem:
    """Active-block quantities shared by every condition in this module."""

    active: list[int]
    inactive: list[int]
    idx_active: NDArray[np.intp]
    factor: tuple[FloatArray, bool]
    h: FloatArray
    directions: list[FloatArray]
    norms: FloatArray

    def solve(self, rhs: FloatArray) -> FloatArray:
        return np.asarray(linalg.cho_solve(self.factor, rhs), dtype=np.float64)


def _active_system(
    model: PopulationModel, blocks: BlockStructure, pattern: SparsityPattern
) -> _ActiveSystem:
    pattern.validate(blocks)
    blocks.check_length(model.w, "w")
    active = pattern.ordered()
    if not active:
        raise ConditionUndefinedError("condition is undefined for an empty active set")
    norms = blocks.norms(model.w)
    zero = [j for j in active if norms[j] == 0.0]
    if zero:
        raise ConditionUndefinedError(f"active groups {zero} have zero loading")

    idx = blocks.indices(active)
    sigma_jj = model.sigma_xx[np.ix_(idx, idx)]
    scale = max(1.0, float(np.max(np.diag(sigma_jj))))
    min_eig = float(np.linalg.eigvalsh(sigma_jj)[0])
    if min_eig <= SINGULAR_TOL * scale:
        raise SingularMatrixError("active covariance block", min_eig)

    directions = [model.w[blocks.span(j)] / norms[j] for j in active]
    h = np.concatenate([blocks.weights[j] * u for j, u in zip(active, directions, strict=True)])
    return _ActiveSystem(
        active=active,
        inactive=pattern.complement(blocks),
        idx_active=idx,
        factor=linalg.cho_factor(sigma_jj),
        h=h,
        directions=directions,
        norms=norms,
    )


def _cross(model: PopulationModel, blocks: BlockStructure, i: int, sys: _ActiveSystem) -> FloatArray:
    return model.sigma_xx[blocks.span(i)][:, sys.idx_active]


def condition_value(
    model: PopulationModel,
    blocks: BlockStructure,
    pattern: SparsityPattern,
    *,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> ConditionReport:
    """Evaluate (1/d_i)‖Σ_{X_iX_J} Σ_{X_JX_J}⁻¹ Diag(d_j/‖w_j‖) w_J‖ for every i ∈ Jᶜ.

    Args:
        model: Population model providing Σ_XX and w.
        blocks: Group partition and weights.
        pattern: Active set J.
        numerics: Supplies the boundary tolerance of the verdict.

    Returns:
        Condition report; an empty Jᶜ gives max value 0 and StrictHolds.

    Raises:
        ConditionUndefinedError: If J is empty or some w_j, j ∈ J, is zero.
        SingularMatrixError: If Σ_{X_JX_J} is numerically singular.
    """
    sys = _active_system(model, blocks, pattern)
    z = sys.solve(sys.h)
    values = {
        i: float(np.linalg.norm(_cross(model, blocks, i, sys) @ z)) / blocks.weights[i]
        for i in sys.inactive
    }
    max_value = max(values.values(), default=0.0)
    return ConditionReport(
        per_group_values=values,
        max_value=max_value,
        verdict=Verdict.classify(max_value, numerics.boundary_tol),
    )


def refined_condition(
    model: PopulationModel,
    blocks: BlockStructure,
    pattern: SparsityPattern,
    *,
    include_violating: bool = False,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> dict[int, float]:
    """Second-order term ΔᵀΣ_{X_JX_i}Σ_{X_iX_J}Σ_{X_JX_J}⁻¹ P Δ at boundary groups.

    Δ = −Σ_{X_JX_J}⁻¹ Diag(d_j/‖w_j‖) w_J and P = Diag[d_j/‖w_j‖ (I − ŵ_jŵ_jᵀ)].
    A positive value means the boundary group does not block model-consistent
    estimation.

    Args:
        model: Population model.
        blocks: Group partition and weights.
        pattern: Active set J.
        include_violating: Also evaluate groups whose condition value exceeds 1.
        numerics: Supplies the boundary tolerance.

    Returns:
        Mapping from the selected inactive groups to their refined value
        (empty when no group is at the boundary).
    """
    report = condition_value(model, blocks, pattern, numerics=numerics)
    tol = numerics.boundary_tol
    if include_violating:
        selected = [i for i, v in report.per_group_values.items() if v >= 1.0 - tol]
    else:
        selected = [i for i, v in report.per_group_values.items() if abs(v - 1.0) <= tol]
    if not selected:
        return {}

    sys = _active_system(model, blocks, pattern)
    delta = -sys.solve(sys.h)
    projected = np.concatenate(
        [
            blocks.weights[j] / sys.norms[j] * (delta_j - u * float(u @ delta_j))
            for j, u, delta_j in zip(
                sys.active,
                sys.directions,
                np.split(delta, np.cumsum([blocks.group_sizes[j] for j in sys.active])[:-1]),
                strict=True,
            )
        ]
    )
    inner = sys.solve(projected)
    out: dict[int, float] = {}
    for i in selected:
        cross = _cross(model, blocks, i, sys)
        out[i] = float((cross @ delta) @ (cross @ inner))
    return out


def _block_normalize(v: FloatArray, sizes: list[int], previous: FloatArray) -> FloatArray:
    out = np.empty_like(v)
    start = 0
    for size in sizes:
        part = v[start : start + size]
        norm = float(np.linalg.norm(part))
        out[start : start + size] = part / norm if norm > 0.0 else previous[start : start + size]
        start += size
    return out


def _product_sphere_max(c: FloatArray, sizes: list[int], starts: list[FloatArray]) -> float:
    """max ‖Cu‖ over u with unit-norm blocks, by simultaneous block power ascent.

    Each step maximizes the linearization of uᵀCᵀCu on the product of spheres,
    so the objective never decreases.
    """
    gram = c.T @ c
    best = 0.0
    for u in starts:
        u = _block_normalize(u, sizes, u)
        value = float(u @ gram @ u)
        for _ in range(POWER_MAX_ITER):
            u = _block_normalize(gram @ u, sizes, u)
            new = float(u @ gram @ u)
            if new - value <= POWER_REL_TOL * max(new, 1e-300):
                value = max(value, new)
                break
            value = new
        best = max(best, value)
    return float(np.sqrt(best))


def loading_free_condition(
    model: PopulationModel,
    blocks: BlockStructure,
    pattern: SparsityPattern,
    restarts: int | None = None,
    *,
    seed: int = 0,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> LoadingFreeBound:
    """Loading-free condition max_i max_u (1/d_i)‖Σ_{X_iX_J}Σ_{X_JX_J}⁻¹ Diag(d_j) u_J‖.

    The inner maximum over per-block unit vectors is nonconvex; it is
    approached from below by block power ascent started at the true loading
    directions, at the leading singular direction and at ``restarts`` random
    points. With a single active group it is solved exactly by an SVD.

    Returns:
        Lower bound with the spectral and semidefinite upper bounds.
    """
    restarts = numerics.loading_free_restarts if restarts is None else restarts
    sys = _active_system(model, blocks, pattern)
    sizes = [blocks.group_sizes[j] for j in sys.active]
    scaling = np.concatenate([np.full(blocks.group_sizes[j], blocks.weights[j]) for j in sys.active])

    per_group: dict[int, float] = {}
    for i in sys.inactive:
        cross = _cross(model, blocks, i, sys)
        c = sys.solve(cross.T).T * scaling
        if len(sys.active) == 1:
            value = float(linalg.svdvals(c)[0]) if c.size else 0.0
        else:
            rng = stream(seed, i)
            starts = [np.concatenate(sys.directions)]
            _, _, vt = np.linalg.svd(c, full_matrices=False)
            starts.append(vt[0])
            starts.extend(rng.standard_normal(c.shape[1]) for _ in range(restarts))
            value = _product_sphere_max(c, sizes, starts)
        per_group[i] = value / blocks.weights[i]

    sdp = max((sdp_upper_bound(model, blocks, pattern, i, numerics=numerics) for i in sys.inactive), default=0.0)
    return LoadingFreeBound(
        value=max(per_group.values(), default=0.0),
        per_group=per_group,
        spectral=spectral_upper_bound(model, blocks, pattern),
        sdp=sdp,
    )


def spectral_upper_bound(
    model: PopulationModel, blocks: BlockStructure, pattern: SparsityPattern
) -> float:
    """max_i (1/d_i) Σ_{j∈J} d_j ‖(Σ_{X_iX_J} Σ_{X_JX_J}⁻¹)_{·j}‖₂ (block spectral norms)."""
    sys = _active_system(model, blocks, pattern)
    best = 0.0
    for i in sys.inactive:
        b = sys.solve(_cross(model, blocks, i, sys).T).T
        total = 0.0
        start = 0
        for j in sys.active:
            size = blocks.group_sizes[j]
            block = b[:, start : start + size]
            total += blocks.weights[j] * float(linalg.norm(block, 2))
            start += size
        best = max(best, total / blocks.weights[i])
    return best


def solve_block_sdp(
    a: FloatArray,
    sizes: list[int],
    *,
    tol: float = DEFAULT_NUMERICS.sdp_gap_tol,
    max_iter: int = DEFAULT_NUMERICS.sdp_max_iter,
) -> SdpCertificate:
    """Solve min Σ_b λ_b subject to blockdiag(λ_b I) − A ⪰ 0 by cutting planes.

    Its value equals max tr(MA) over M ⪰ 0 with unit-trace diagonal blocks.
    Each LP relaxation gives a lower bound; shifting its multipliers by the
    most negative eigenvalue of the slack matrix gives a feasible point and
    hence an upper bound. Eigenvectors with negative eigenvalues become new
    cuts Σ_b λ_b ‖v_b‖² ≥ vᵀAv.

    Raises:
        ConvergenceError: If the gap is still above tol·max(1, upper) after
            max_iter rounds; carries the last gap.
    """
    a = 0.5 * (a + a.T)
    nb = len(sizes)
    owner = np.repeat(np.arange(nb), sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    top = max(float(np.linalg.eigvalsh(a)[-1]), 0.0)

    rows: list[FloatArray] = []
    rhs: list[float] = []
    # λ_b ≥ λ_max(A_bb): the diagonal blocks of the slack must be PSD
    for b in range(nb):
        block = a[offsets[b] : offsets[b + 1], offsets[b] : offsets[b + 1]]
        row = np.zeros(nb)
        row[b] = 1.0
        rows.append(row)
        rhs.append(float(np.linalg.eigvalsh(block)[-1]))

    cost = np.ones(nb)
    upper = np.inf
    best = np.full(nb, top)
    lower = -np.inf
    for it in range(1, max_iter + 1):
        res = optimize.linprog(
            cost,
            A_ub=-np.vstack(rows),
            b_ub=-np.asarray(rhs),
            bounds=[(0.0, nb * top + 1.0)] * nb,
            method="highs",
        )
        if res.status != 0:
            raise ConvergenceError(f"cutting-plane LP ({res.message})", upper - lower, it)
        lam = np.asarray(res.x, dtype=np.float64)
        lower = max(lower, float(res.fun))

        vals, vecs = np.linalg.eigh(np.diag(lam[owner]) - a)
        shift = max(0.0, -float(vals[0]))
        candidate = float(lam.sum()) + nb * shift
        if candidate < upper:
            upper = candidate
            best = lam + shift
        if upper - lower <= tol * max(1.0, upper):
            logger.debug(f"solve_block_sdp: {it} rounds, gap={upper - lower:.2e}")
            return SdpCertificate(lower=lower, upper=upper, multipliers=best, iterations=it)

        for k in np.flatnonzero(vals < 0.0)[:nb]:
            v = vecs[:, k]
            rows.append(np.bincount(owner, weights=v * v, minlength=nb))
            rhs.append(float(v @ a @ v))
    raise ConvergenceError("cutting-plane SDP", upper - lower, max_iter)


def sdp_upper_bound(
    model: PopulationModel,
    blocks: BlockStructure,
    pattern: SparsityPattern,
    i: int,
    *,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> float:
    """Semidefinite relaxation bound on the loading-free value of group i.

    Equals sqrt(max tr MA)/d_i with A = Diag(d_j)Σ_{X_JX_J}⁻¹Σ_{X_JX_i}Σ_{X_iX_J}Σ_{X_JX_J}⁻¹Diag(d_j).
    """
    sys = _active_system(model, blocks, pattern)
    if i in pattern.active or not 0 <= i < blocks.m:
        raise ValueError(f"group {i} is not an inactive group of the pattern")
    scaling = np.concatenate([np.full(blocks.group_sizes[j], blocks.weights[j]) for j in sys.active])
    c = sys.solve(_cross(model, blocks, i, sys).T).T * scaling
    cert = solve_block_sdp(
        c.T @ c,
        [blocks.group_sizes[j] for j in sys.active],
        tol=numerics.sdp_gap_tol,
        max_iter=numerics.sdp_max_iter,
    )
    return float(np.sqrt(max(cert.upper, 0.0))) / blocks.weights[i]


def pattern_probability_limit(
    model: PopulationModel,
    blocks: BlockStructure,
    pattern: SparsityPattern,
    lambda0: float,
    draws: int | None = None,
    *,
    seed: int = 0,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> PatternProbability:
    """Monte-Carlo limit of P(Ĵ = J) when λ_n = λ₀ n^(-1/2).

    Estimates P(max_{i∈Jᶜ} (1/d_i)‖(σ/λ₀) t_i − v_i‖ ≤ 1) where v_i is the
    condition vector of group i and t ~ N(0, Σ_{Jᶜ Jᶜ | J}). Draws are taken in
    fixed chunks from streams keyed by (seed, chunk), so estimates at different
    λ₀ or σ share their random numbers.

    Args:
        model: Population model (σ taken from it).
        blocks: Group partition and weights.
        pattern: Active set J.
        lambda0: Constant of the regularization schedule, positive.
        draws: Number of draws (defaults to ``numerics.mc_draws``).
        seed: Root seed.
        numerics: Tolerances.

    Returns:
        Estimate with its binomial standard error.

    Raises:
        NotPositiveSemidefiniteError: If the conditional covariance has an
            eigenvalue below −1e-8.
    """
    if lambda0 <= 0:
        raise ValueError(f"lambda0 must be positive (got {lambda0})")
    draws = numerics.mc_draws if draws is None else draws
    if draws < 1:
        raise ValueError(f"draws must be at least 1 (got {draws})")
    sys = _active_system(model, blocks, pattern)
    if not sys.inactive:
        return PatternProbability(estimate=1.0, std_error=0.0, draws=draws)

    idx_c = blocks.indices(sys.inactive)
    cross = model.sigma_xx[np.ix_(idx_c, sys.idx_active)]
    v = cross @ sys.solve(sys.h)
    cond = model.sigma_xx[np.ix_(idx_c, idx_c)] - cross @ sys.solve(cross.T)
    cond = 0.5 * (cond + cond.T)
    vals, vecs = np.linalg.eigh(cond)
    if vals[0] < -CONDITIONAL_PSD_TOL:
        raise NotPositiveSemidefiniteError("conditional covariance of inactive groups", float(vals[0]))
    factor = vecs * np.sqrt(np.maximum(vals, 0.0))

    scale = model.sigma / lambda0
    bounds = np.concatenate([[0], np.cumsum([blocks.group_sizes[i] for i in sys.inactive])])
    weights = np.array([blocks.weights[i] for i in sys.inactive])

    hits = 0
    for chunk, start in enumerate(range(0, draws, MC_CHUNK)):
        size = min(MC_CHUNK, draws - start)
        t = stream(seed, chunk).standard_normal((size, idx_c.shape[0])) @ factor.T
        dev = scale * t - v
        ok = np.ones(size, dtype=bool)
        for g in range(len(sys.inactive)):
            part = dev[:, bounds[g] : bounds[g + 1]]
            ok &= np.linalg.norm(part, axis=1) / weights[g] <= 1.0
        hits += int(ok.sum())

    estimate = hits / draws
    return PatternProbability(
        estimate=estimate,
        std_error=float(np.sqrt(estimate * (1.0 - estimate) / draws)),
        draws=draws,
    )


def population_pattern_window(
    model: PopulationModel,
    blocks: BlockStructure,
    pattern: SparsityPattern,
    grid_spec: GridSpec = GridSpec(points=200, min_ratio=1e-4),
    *,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> list[float]:
    """λ₀ values of the population path whose solution has exactly pattern J."""
    path = population_path(model, blocks, grid_spec, numerics=numerics)
    return [float(lam) for lam, sol in zip(path.grid, path.solutions, strict=True) if sol.pattern == pattern]
