"""Kernelized group Lasso (multiple kernel learning with a squared block norm).

The problem solved is

    min_f (1/2n)‖Ȳ − Σ_j f_j(X_j)‖² + (μ/2)(Σ_j d_j‖f_j‖)²

over functions f_j in the RKHS of kernel k_j. By the representer property
f_j = η_j Σ_a α_a k_j(·, x_a), where (α, η) solve the dual

    max_α  μαᵀȲ − (nμ²/2)‖α‖² − (μ/2) max_j αᵀK_jα / d_j²

with η on the simplex Σ_j η_j d_j² = 1. All kernels are centered by Π_n.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg
from sklearn.metrics.pairwise import pairwise_kernels

from src.core.errors import (
    ConditionUndefinedError,
    ConvergenceError,
    DimensionMismatchError,
    NotPositiveSemidefiniteError,
    SingularMatrixError,
)
from src.core.model import BlockStructure, Dataset, SparsityPattern
from src.ports.settings import DEFAULT_NUMERICS, NumericsPort

__all__ = [
    "KernelKind",
    "KernelSpec",
    "KernelProblem",
    "MklSolution",
    "LeastSquaresKernelFit",
    "kernel_matrix",
    "kernel_problem",
    "trace_weights",
    "mkl_solve",
    "mkl_kkt_check",
    "fitted_values",
    "predict",
    "ls_kernel_estimate",
    "kappa_schedule",
    "adaptive_mkl",
    "adaptive_kernel_weights",
    "estimate_condition",
]

logger = logging.getLogger(__name__)

PSD_REL_TOL = 1e-8
POLISH_SHARE = 1e-10
POLISH_EVERY = 50
POLISH_TRIAL_SHARE = 1e-6
PRUNE_DEFICITS = (1e-2, 1e-4, 1e-6)

FloatArray = NDArray[np.float64]


class KernelKind(StrEnum):
    GAUSSIAN = "gaussian"
    LINEAR = "linear"


@dataclass(slots=True, frozen=True)
class KernelSpec:
    """Kernel of one group: Gaussian exp(−b‖x − x'‖²) or linear xᵀx'."""

    kind: KernelKind
    bandwidth: float | None = None

    def __post_init__(self) -> None:
        if self.kind is KernelKind.GAUSSIAN and (self.bandwidth is None or self.bandwidth <= 0):
            raise ValueError(f"gaussian kernel needs a positive bandwidth (got {self.bandwidth})")

    @classmethod
    def parse(cls, text: str) -> KernelSpec:
        """Parse ``linear`` or ``gaussian:b=<bandwidth>``."""
        kind, _, params = text.strip().partition(":")
        try:
            parsed = KernelKind(kind.lower())
        except ValueError:
            raise ValueError(f"unknown kernel '{text}' (expected 'linear' or 'gaussian:b=<value>')") from None
        if parsed is KernelKind.LINEAR:
            return cls(kind=parsed)
        key, _, value = params.partition("=")
        if key.strip() != "b" or not value:
            raise ValueError(f"gaussian kernel needs a bandwidth, e.g. 'gaussian:b=1' (got '{text}')")
        return cls(kind=parsed, bandwidth=float(value))


def kernel_matrix(spec: KernelSpec, column_data: ArrayLike, other: ArrayLike | None = None) -> FloatArray:
    """Gram matrix K_ab = k(x_a, x_b), or the cross matrix against ``other``.

    Raises:
        ValueError: If the data contain non-finite values.
    """
    x = np.asarray(column_data, dtype=np.float64)
    x = x.reshape(-1, 1) if x.ndim == 1 else x
    y = None if other is None else np.asarray(other, dtype=np.float64)
    if y is not None and y.ndim == 1:
        y = y.reshape(-1, 1)
    if not np.all(np.isfinite(x)) or (y is not None and not np.all(np.isfinite(y))):
        raise ValueError("kernel input contains non-finite values")
    if spec.kind is KernelKind.GAUSSIAN:
        k = pairwise_kernels(x, y, metric="rbf", gamma=spec.bandwidth)
    else:
        k = pairwise_kernels(x, y, metric="linear")
    k = np.asarray(k, dtype=np.float64)
    if y is None:
        k = 0.5 * (k + k.T)
    return k


def _center(k: FloatArray) -> FloatArray:
    """Π_n K Π_n without forming Π_n."""
    row = k.mean(axis=1, keepdims=True)
    col = k.mean(axis=0, keepdims=True)
    out = k - row - col + k.mean()
    return 0.5 * (out + out.T)


def _repair_psd(k: FloatArray, j: int) -> FloatArray:
    n = k.shape[0]
    vals, vecs = np.linalg.eigh(k)
    tol = PSD_REL_TOL * max(float(np.trace(k)), 0.0) / n
    if vals[0] < -tol:
        raise NotPositiveSemidefiniteError(f"kernel matrix {j}", float(vals[0]))
    if vals[0] < 0.0:
        k = (vecs * np.maximum(vals, 0.0)) @ vecs.T
        k = 0.5 * (k + k.T)
    return k


@dataclass(slots=True, frozen=True)
class KernelProblem:
    """Kernel matrices of the m groups, the response and the penalty weights.

    Attributes:
        kernels: Symmetric PSD matrices K_j (n, n).
        y: Response of length n.
        weights: Penalty weights d_j.
        centered: Π_n K_j Π_n, computed on construction.
        y_centered: Π_n y.
    """

    kernels: tuple[FloatArray, ...]
    y: FloatArray
    weights: tuple[float, ...]
    centered: tuple[FloatArray, ...] = field(init=False, repr=False)
    y_centered: FloatArray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        y = np.array(self.y, dtype=np.float64).reshape(-1)
        n = y.shape[0]
        if n < 2:
            raise ValueError(f"a kernel problem needs at least 2 samples (got {n})")
        if len(self.weights) != len(self.kernels):
            raise DimensionMismatchError("groups", len(self.kernels), len(self.weights), "weights")
        if not self.kernels:
            raise ValueError("a kernel problem needs at least one kernel")
        if any(w <= 0 for w in self.weights):
            raise ValueError(f"weights must be positive (got {self.weights})")
        kernels = []
        for j, k in enumerate(self.kernels):
            k = np.asarray(k, dtype=np.float64)
            if k.shape != (n, n):
                raise DimensionMismatchError("n", n, int(k.shape[0]), f"kernel {j}")
            kernels.append(_repair_psd(0.5 * (k + k.T), j))
        centered = tuple(_center(k) for k in kernels)
        for arr in (*kernels, *centered, y):
            arr.setflags(write=False)
        y_c = y - y.mean()
        y_c.setflags(write=False)
        object.__setattr__(self, "kernels", tuple(kernels))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "centered", centered)
        object.__setattr__(self, "y_centered", y_c)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def m(self) -> int:
        return len(self.kernels)

    @property
    def d(self) -> FloatArray:
        return np.asarray(self.weights, dtype=np.float64)

    def with_weights(self, weights: ArrayLike) -> KernelProblem:
        return KernelProblem(
            kernels=self.kernels,
            y=self.y,
            weights=tuple(float(w) for w in np.asarray(weights, dtype=np.float64).reshape(-1)),
        )


@dataclass(slots=True, frozen=True)
class MklSolution:
    """Certified MKL solution.

    Attributes:
        alpha: Dual vector (n,), orthogonal to the constants.
        eta: Kernel weights with Σ_j η_j d_j² = 1.
        norms: RKHS norms ‖f_j‖ = η_j (αᵀK_jα)^(1/2).
        mu: Regularization.
        duality_gap: Primal minus dual value at the returned point.
        primal: Primal objective value.
        iterations: Alternating iterations performed.
        weights: Penalty weights the problem was solved with.
    """

    alpha: FloatArray
    eta: FloatArray
    norms: FloatArray
    mu: float
    duality_gap: float
    primal: float
    iterations: int
    weights: tuple[float, ...]


@dataclass(slots=True, frozen=True)
class LeastSquaresKernelFit:
    alpha: FloatArray
    norms: FloatArray
    kappa: float


def kernel_problem(
    data: Dataset,
    blocks: BlockStructure,
    specs: list[KernelSpec] | KernelSpec,
    weights: ArrayLike | None = None,
) -> KernelProblem:
    """Build one kernel per group from the group's columns of X."""
    if data.x.shape[1] != blocks.p:
        raise DimensionMismatchError("columns", blocks.p, int(data.x.shape[1]), "design matrix")
    specs = [specs] * blocks.m if isinstance(specs, KernelSpec) else specs
    if len(specs) != blocks.m:
        raise DimensionMismatchError("groups", blocks.m, len(specs), "kernel specs")
    kernels = tuple(kernel_matrix(spec, data.x[:, blocks.span(j)]) for j, spec in enumerate(specs))
    w = blocks.weights if weights is None else tuple(np.asarray(weights, dtype=np.float64))
    return KernelProblem(kernels=kernels, y=data.y, weights=tuple(float(v) for v in w))


def trace_weights(kernels: list[FloatArray] | tuple[FloatArray, ...]) -> FloatArray:
    """d_j = ((1/n) tr Π_n K_j Π_n)^(1/2)."""
    return np.array([np.sqrt(max(float(np.trace(_center(np.asarray(k)))), 0.0) / k.shape[0]) for k in kernels])


@dataclass(slots=True)
class _State:
    alpha: FloatArray
    eta: FloatArray
    s: FloatArray
    primal: float
    dual: float

    @property
    def gap(self) -> float:
        return self.primal - self.dual


def _evaluate(prob: KernelProblem, eta: FloatArray, mu: float) -> _State:
    n = prob.n
    system = sum((e * k for e, k in zip(eta, prob.centered, strict=True)), start=n * mu * np.eye(n))
    try:
        alpha = linalg.cho_solve(linalg.cho_factor(system), prob.y_centered)
    except linalg.LinAlgError as exc:
        raise SingularMatrixError("regularized kernel system", float("nan"), "mu must be positive") from exc
    alpha = alpha - alpha.mean()
    s = np.array([max(float(alpha @ k @ alpha), 0.0) for k in prob.centered])
    d = prob.d
    fit = sum((e * (k @ alpha) for e, k in zip(eta, prob.centered, strict=True)), start=np.zeros(n))
    resid = prob.y_centered - fit
    primal = float(resid @ resid) / (2 * n) + 0.5 * mu * float(d @ (eta * np.sqrt(s))) ** 2
    dual = (
        mu * float(alpha @ prob.y_centered)
        - 0.5 * n * mu * mu * float(alpha @ alpha)
        - 0.5 * mu * float(np.max(s / d**2))
    )
    return _State(alpha=alpha, eta=eta, s=s, primal=primal, dual=dual)


def _renormalize(eta: FloatArray, d: FloatArray) -> FloatArray:
    return eta / float(eta @ d**2)


def _converged(state: _State, tol: float) -> bool:
    return state.gap <= tol * (1.0 + abs(state.primal))


def _polish(prob: KernelProblem, state: _State, mu: float, share: float, tol: float) -> _State | None:
    """Drop kernels whose simplex share η_j d_j² is below ``share``; keep if still certified."""
    d = prob.d
    keep = state.eta * d**2 >= share
    if keep.all() or not keep.any():
        return None
    trial = _evaluate(prob, _renormalize(np.where(keep, state.eta, 0.0), d), mu)
    return trial if _converged(trial, tol) else None


def _alternate(prob: KernelProblem, state: _State, mu: float, tol: float, max_iter: int) -> tuple[_State, int]:
    """Alternating updates until the gap test passes; zero weights stay zero."""
    d = prob.d
    iterations = 0
    while not _converged(state, tol) and iterations < max_iter:
        norms = state.eta * np.sqrt(state.s)
        total = float(d @ norms)
        if total == 0.0:
            break
        state = _evaluate(prob, (norms / d) / total, mu)
        iterations += 1
    return state, iterations


def _prune(prob: KernelProblem, state: _State, mu: float, tol: float, max_iter: int) -> _State | None:
    """Zero the kernels that fail complementarity and re-solve on the rest.

    A kernel with x_j = αᵀΠK_jΠα/d_j² below max_j x_j cannot carry weight at
    the optimum, but the multiplicative update only shrinks it geometrically.
    Kernels whose relative deficit (max x − x_j)/max x exceeds a threshold are
    set to zero, the remaining weights are refined, and the result is kept
    only if its gap, whose dual term maximizes over every kernel, passes.
    """
    d = prob.d
    x = state.s / d**2
    top = float(x.max())
    live = state.eta > 0.0
    if top <= 0.0 or live.sum() < 2:
        return None
    deficit = (top - x) / top
    for threshold in PRUNE_DEFICITS:
        keep = live & (deficit <= threshold)
        if not keep.any() or keep.sum() == live.sum():
            continue
        start = _evaluate(prob, _renormalize(np.where(keep, state.eta, 0.0), d), mu)
        trial, _ = _alternate(prob, start, mu, tol, max_iter)
        if _converged(trial, tol):
            logger.debug(f"mkl prune: dropped kernels {np.flatnonzero(live & ~keep).tolist()} at deficit {threshold:g}")
            return trial
    return None


def mkl_solve(
    prob: KernelProblem,
    mu: float,
    *,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> MklSolution:
    """Solve the squared-norm MKL problem by alternating minimization.

    Given η, α solves (Σ_j η_jΠK_jΠ + nμI)α = ΠȲ; given α, η_j is set to
    (‖f_j‖/d_j)/Σ_i d_i‖f_i‖, which keeps Σ_j η_j d_j² = 1. Iterates until
    the duality gap is at most ``mkl_gap_tol``·(1 + |primal|), then zeroes
    the kernels that fail complementarity and re-certifies the gap, so
    inactive kernels come back with η_j = 0 exactly.

    Args:
        prob: Kernel problem.
        mu: Regularization, positive.
        numerics: Gap tolerance, iteration cap and size cap.

    Returns:
        Solution with its duality gap.

    Raises:
        ConvergenceError: If the iteration cap is hit; carries the last gap.
    """
    if mu <= 0:
        raise ValueError(f"mu must be positive (got {mu})")
    if prob.n > numerics.mkl_max_n:
        raise ValueError(f"n={prob.n} exceeds the kernel solver cap of {numerics.mkl_max_n} samples")
    d = prob.d
    tol = numerics.mkl_gap_tol
    eta = 1.0 / (prob.m * d**2)

    state = _evaluate(prob, eta, mu)
    iterations = 0
    while not _converged(state, tol):
        if iterations >= numerics.mkl_max_iter:
            raise ConvergenceError("alternating MKL", state.gap, iterations)
        norms = state.eta * np.sqrt(state.s)
        total = float(d @ norms)
        if total == 0.0:
            break
        state = _evaluate(prob, (norms / d) / total, mu)
        iterations += 1
        if iterations % POLISH_EVERY == 0:
            polished = _polish(prob, state, mu, POLISH_TRIAL_SHARE, tol)
            if polished is not None:
                state = polished
                break

    pruned = _prune(prob, state, mu, tol, numerics.mkl_max_iter)
    if pruned is None:
        polished = _polish(prob, state, mu, POLISH_SHARE, tol)
        if polished is not None:
            state = polished
    # each accepted prune zeroes at least one more kernel
    while pruned is not None:
        state = pruned
        pruned = _prune(prob, state, mu, tol, numerics.mkl_max_iter)

    alpha = state.alpha
    eta = state.eta
    norms = eta * np.sqrt(state.s)
    for arr in (alpha, eta, norms):
        arr.setflags(write=False)
    logger.debug(f"mkl_solve: mu={mu:.4g} iterations={iterations} gap={state.gap:.2e}")
    return MklSolution(
        alpha=alpha,
        eta=eta,
        norms=norms,
        mu=float(mu),
        duality_gap=float(state.gap),
        primal=float(state.primal),
        iterations=iterations,
        weights=prob.weights,
    )


def fitted_values(prob: KernelProblem, sol: MklSolution) -> FloatArray:
    """Centered training predictions Σ_j η_j ΠK_jΠ α."""
    return np.asarray(
        sum((e * (k @ sol.alpha) for e, k in zip(sol.eta, prob.centered, strict=True)), start=np.zeros(prob.n)),
        dtype=np.float64,
    )


def predict(sol: MklSolution, cross_kernels: list[FloatArray]) -> FloatArray:
    """Σ_j η_j K_j(new, train) α, with one cross kernel matrix per group.

    Since αᵀ1 = 0, the result equals the fitted additive function up to a constant.
    """
    if len(cross_kernels) != sol.eta.shape[0]:
        raise DimensionMismatchError("groups", int(sol.eta.shape[0]), len(cross_kernels), "cross kernels")
    return np.asarray(sum(e * (k @ sol.alpha) for e, k in zip(sol.eta, cross_kernels, strict=True)), dtype=np.float64)


def mkl_kkt_check(prob: KernelProblem, sol: MklSolution) -> float:
    """Largest violation among the MKL optimality conditions.

    Terms: relative residual of (Σ_j η_jΠK_jΠ + nμI)α = ΠȲ, the simplex
    normalization error |Σ η_j d_j² − 1|, negative weights, the
    complementarity Σ_j η_j d_j²(M − x_j)/M with x_j = αᵀΠK_jΠα/d_j² and
    M = max_j x_j, the centering |αᵀ1| and the consistency of the stored norms.
    """
    d = prob.d
    eta = np.asarray(sol.eta, dtype=np.float64)
    alpha = np.asarray(sol.alpha, dtype=np.float64)
    if eta.shape[0] != prob.m or alpha.shape[0] != prob.n:
        raise DimensionMismatchError("n", prob.n, int(alpha.shape[0]), "solution")
    system = fitted_values(prob, sol) + prob.n * sol.mu * alpha - prob.y_centered
    linear = float(np.linalg.norm(system)) / (1.0 + float(np.linalg.norm(prob.y_centered)))
    normalization = abs(float(eta @ d**2) - 1.0)
    negativity = max(0.0, -float(eta.min()))
    s = np.array([max(float(alpha @ k @ alpha), 0.0) for k in prob.centered])
    x = s / d**2
    top = float(x.max())
    complementarity = float((eta * d**2) @ (top - x)) / top if top > 0.0 else 0.0
    centering = abs(float(alpha.sum()))
    norms = float(np.max(np.abs(np.asarray(sol.norms) - eta * np.sqrt(s))))
    return max(linear, normalization, negativity, complementarity, centering, norms)


def ls_kernel_estimate(
    prob: KernelProblem,
    kappa: float,
    groups: list[int] | None = None,
) -> LeastSquaresKernelFit:
    """Kernel ridge estimate α = Π(Σ_{j∈G}ΠK_jΠ + nκI)⁻¹ΠȲ with norms (αᵀΠK_jΠα)^(1/2).

    Norms of groups outside ``groups`` are zero.
    """
    if kappa <= 0:
        raise ValueError(f"kappa must be positive (got {kappa})")
    groups = list(range(prob.m)) if groups is None else groups
    n = prob.n
    system = sum((prob.centered[j] for j in groups), start=n * kappa * np.eye(n))
    try:
        alpha = linalg.solve(system, prob.y_centered, assume_a="pos")
    except linalg.LinAlgError as exc:
        raise SingularMatrixError("least-squares kernel system", float("nan")) from exc
    alpha = alpha - alpha.mean()
    norms = np.zeros(prob.m)
    for j in groups:
        norms[j] = np.sqrt(max(float(alpha @ prob.centered[j] @ alpha), 0.0))
    return LeastSquaresKernelFit(alpha=alpha, norms=norms, kappa=float(kappa))


def kappa_schedule(n: int, kappa0: float) -> float:
    """κ_n = κ₀ n^(-1/3)."""
    return float(kappa0 * n ** (-1.0 / 3.0))


def adaptive_mkl(
    prob: KernelProblem,
    mu0: float,
    gamma: float,
    *,
    kappa0: float | None = None,
    numerics: NumericsPort = DEFAULT_NUMERICS,
) -> MklSolution:
    """Adaptive MKL: weights ‖f̂_j^LS‖^(−γ) from a kernel ridge fit, μ = μ₀n^(-1/3).

    The ridge fit uses κ_n = κ₀n^(-1/3). Weights are rescaled so that the
    smallest equals one.

    Raises:
        ConditionUndefinedError: If a least-squares group norm is zero.
    """
    if gamma <= 1:
        logger.warning(f"adaptive MKL with gamma={gamma}: consistency is only guaranteed for gamma > 1")
    kappa0 = numerics.kappa0 if kappa0 is None else kappa0
    weights = adaptive_kernel_weights(prob, gamma, kappa_schedule(prob.n, kappa0))
    return mkl_solve(prob.with_weights(weights), mu0 * prob.n ** (-1.0 / 3.0), numerics=numerics)


def adaptive_kernel_weights(prob: KernelProblem, gamma: float, kappa: float) -> FloatArray:
    """Weights ‖f̂_j^LS‖^(−γ) of the kernel ridge fit at κ, rescaled to a unit minimum.

    Raises:
        ConditionUndefinedError: If a least-squares group norm is zero.
    """
    fit = ls_kernel_estimate(prob, kappa)
    zero = [j for j in range(prob.m) if fit.norms[j] == 0.0]
    if zero:
        raise ConditionUndefinedError(f"least-squares kernel estimate vanishes on groups {zero}")
    weights = fit.norms ** (-gamma)
    weights = weights / weights.min()
    logger.debug(f"adaptive kernel weights: kappa={kappa:.3g} weights={np.round(weights, 4).tolist()}")
    return np.asarray(weights, dtype=np.float64)


def estimate_condition(
    prob: KernelProblem,
    pattern: SparsityPattern,
    kappa: float,
) -> dict[int, float]:
    """Data-driven estimate of the kernel consistency condition for i ∈ Jᶜ.

    With S = Σ_{j∈J}ΠK_jΠ + nκI, α = S⁻¹ΠȲ, η̂_j = (αᵀΠK_jΠα)^(1/2)/d_j and
    u = S⁻¹ Σ_{j∈J}(1/η̂_j)ΠK_jΠα, the value of group i is ‖(ΠK_iΠ)^(1/2)u‖.
    Values are not divided by d_i.

    Raises:
        ConditionUndefinedError: If J is empty or some η̂_j is zero.
    """
    if kappa <= 0:
        raise ValueError(f"kappa must be positive (got {kappa})")
    active = pattern.ordered()
    if not active:
        raise ConditionUndefinedError("condition is undefined for an empty active set")
    if active[-1] >= prob.m:
        raise ValueError(f"pattern references groups beyond the {prob.m} kernels")
    n = prob.n
    factor = linalg.cho_factor(sum((prob.centered[j] for j in active), start=n * kappa * np.eye(n)))
    alpha = linalg.cho_solve(factor, prob.y_centered)
    rhs = np.zeros(n)
    for j in active:
        k_alpha = prob.centered[j] @ alpha
        eta_hat = np.sqrt(max(float(alpha @ k_alpha), 0.0)) / prob.weights[j]
        if eta_hat == 0.0:
            raise ConditionUndefinedError(f"estimated weight of active group {j} is zero")
        rhs += k_alpha / eta_hat
    u = linalg.cho_solve(factor, rhs)
    return {
        i: float(np.sqrt(max(float(u @ prob.centered[i] @ u), 0.0)))
        for i in range(prob.m)
        if i not in pattern.active
    }
