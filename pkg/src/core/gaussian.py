"""Covariance operators of Gaussian kernels under jointly Gaussian inputs.

For k(x, x') = exp(−b(x − x')²) and X ~ N(0, S) the kernel's eigenpairs
under the marginal of X are known in closed form:

    a = 1/(4S),  c = sqrt(a² + 2ab),  A = a + b + c,  B = b/A,
    λ_k = sqrt(2a/A)·B^k,
    e_k(x) = sqrt(λ_k)·(c/a)^(1/4)·exp(−(c − a)x²)·h_k(sqrt(2c)·x),

with h_k = H_k / sqrt(2^k k!) the normalized physicists' Hermite
polynomials. The functions e_k are orthonormal in the RKHS and satisfy
E e_k e_l = λ_k δ_kl. Means and cross moments between two correlated
inputs reduce to one-dimensional closed forms and two-dimensional
Gauss-Hermite integrals, which lets the kernel consistency condition be
evaluated on a truncated basis without sampling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.typing import ArrayLike, NDArray
from scipy import linalg, special

from src.core.consistency import ConditionReport, Verdict
from src.core.errors import (
    ConditionUndefinedError,
    DimensionMismatchError,
    NotPositiveSemidefiniteError,
    SingularMatrixError,
)
from src.core.model import SparsityPattern
from src.ports.settings import DEFAULT_NUMERICS, NumericsPort

__all__ = [
    "GaussianEigenSystem",
    "TruncatedOperatorModel",
    "eigen_system",
    "hermite_normalized",
    "eigenfunction_values",
    "eigenfunction_means",
    "d_kl_quadrature",
    "cross_moments",
    "operator_model",
    "function_covariance",
    "analytic_condition",
    "range_projection",
]

logger = logging.getLogger(__name__)

EIGEN_RATIO_FLOOR = 1e-12
DEGENERATE_TOL = 1e-12

FloatArray = NDArray[np.float64]


@dataclass(slots=True, frozen=True)
class GaussianEigenSystem:
    """Closed-form eigen-system of one group (input variance s, bandwidth b)."""

    s: float
    b: float
    truncation: int
    a: float
    c: float
    big_a: float
    big_b: float
    eigenvalues: FloatArray


@dataclass(slots=True, frozen=True)
class TruncatedOperatorModel:
    """Non-centered moments of all groups' eigenfunctions.

    Attributes:
        systems: Eigen-system of every group.
        means: Array (m, K) of E e_k^j(X_j).
        cross: Array (m, m, K, K) of E e_k^i(X_i) e_l^j(X_j); diagonal blocks are diag(λ^j).
        s: Input covariance.
    """

    systems: tuple[GaussianEigenSystem, ...]
    means: FloatArray
    cross: FloatArray
    s: FloatArray

    @property
    def m(self) -> int:
        return len(self.systems)

    @property
    def truncation(self) -> int:
        return int(self.means.shape[1])

    def covariance_block(self, i: int, j: int) -> FloatArray:
        """Centered block Σ_{X_iX_j} in RKHS coordinates."""
        return self.cross[i, j] - np.outer(self.means[i], self.means[j])


def eigen_system(s: float, b: float, truncation: int) -> GaussianEigenSystem:
    if s <= 0 or b <= 0:
        raise ValueError(f"input variance and bandwidth must be positive (got s={s}, b={b})")
    if truncation < 1:
        raise ValueError(f"truncation must be at least 1 (got {truncation})")
    a = 1.0 / (4.0 * s)
    c = float(np.sqrt(a * a + 2.0 * a * b))
    big_a = a + b + c
    big_b = b / big_a
    eigenvalues = np.sqrt(2.0 * a / big_a) * big_b ** np.arange(truncation, dtype=np.float64)
    eigenvalues.setflags(write=False)
    return GaussianEigenSystem(
        s=float(s),
        b=float(b),
        truncation=truncation,
        a=a,
        c=c,
        big_a=big_a,
        big_b=big_b,
        eigenvalues=eigenvalues,
    )


def hermite_normalized(x: ArrayLike, count: int) -> FloatArray:
    """h_0..h_{count-1} at x, stacked on a new last axis.

    Uses the stable recurrence
    h_{k+1} = x·sqrt(2/(k+1))·h_k − sqrt(k/(k+1))·h_{k−1}.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape + (count,))
    out[..., 0] = 1.0
    if count > 1:
        out[..., 1] = np.sqrt(2.0) * x
    for k in range(1, count - 1):
        out[..., k + 1] = x * np.sqrt(2.0 / (k + 1)) * out[..., k] - np.sqrt(k / (k + 1)) * out[..., k - 1]
    return out


def eigenfunction_values(sys: GaussianEigenSystem, x: ArrayLike) -> FloatArray:
    """Matrix (n, K) of e_k(x_a)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    envelope = (sys.c / sys.a) ** 0.25 * np.exp(-(sys.c - sys.a) * x * x)
    herm = hermite_normalized(np.sqrt(2.0 * sys.c) * x, sys.truncation)
    return envelope[:, None] * herm * np.sqrt(sys.eigenvalues)[None, :]


def eigenfunction_means(sys: GaussianEigenSystem) -> FloatArray:
    """E e_k(X) for k < K; odd entries are exactly zero.

    E e_{2n} = (λ_{2n}·2(ac)^(1/2)/(a + c)·C(2n, n))^(1/2)·((c − a)/(2(c + a)))^n,
    evaluated in log space.
    """
    a, c = sys.a, sys.c
    out = np.zeros(sys.truncation)
    log_ratio = np.log((c - a) / (2.0 * (c + a)))
    log_front = np.log(2.0 * np.sqrt(a * c) / (a + c))
    for k in range(0, sys.truncation, 2):
        n = k // 2
        log_binom = special.gammaln(k + 1) - 2.0 * special.gammaln(n + 1)
        out[k] = np.exp(0.5 * (np.log(sys.eigenvalues[k]) + log_front + log_binom) + n * log_ratio)
    return out


def _d_tilde_table(q: FloatArray, count: int, margin: int) -> FloatArray:
    """∫∫ exp(−(u,v)Q(u,v)ᵀ) h_k(u) h_l(v) du dv for k, l < count."""
    q = 0.5 * (np.asarray(q, dtype=np.float64) + np.asarray(q, dtype=np.float64).T)
    if q.shape != (2, 2):
        raise DimensionMismatchError("rows", 2, int(q.shape[0]), "Q")
    vals, vecs = np.linalg.eigh(q)
    if vals[0] <= 0.0:
        raise NotPositiveSemidefiniteError("Q (must be positive definite)", float(vals[0]))
    nodes, weights = hermgauss(2 * (count - 1) + margin)
    s1, s2 = np.meshgrid(nodes, nodes, indexing="ij")
    w2 = np.outer(weights, weights)
    rot = vecs / np.sqrt(vals)[None, :]
    u = rot[0, 0] * s1 + rot[0, 1] * s2
    v = rot[1, 0] * s1 + rot[1, 1] * s2
    hu = hermite_normalized(u, count)
    hv = hermite_normalized(v, count)
    table = np.einsum("ab,abk,abl->kl", w2, hu, hv)
    return table / np.sqrt(vals[0] * vals[1])


def d_kl_quadrature(q: ArrayLike, k: int, ell: int, *, margin: int = DEFAULT_NUMERICS.quadrature_margin) -> float:
    """∫∫ exp(−(u,v)Q(u,v)ᵀ) H_k(u) H_ell(v) du dv with physicists' Hermite H_k.

    Raises:
        NotPositiveSemidefiniteError: If Q is not positive definite.
    """
    if k < 0 or ell < 0:
        raise ValueError(f"orders must be non-negative (got {k}, {ell})")
    table = _d_tilde_table(np.asarray(q, dtype=np.float64), max(k, ell) + 1, margin)
    log_scale = 0.5 * ((k + ell) * np.log(2.0) + special.gammaln(k + 1) + special.gammaln(ell + 1))
    return float(table[k, ell] * np.exp(log_scale))


def cross_moments(
    s2: ArrayLike,
    sys_i: GaussianEigenSystem,
    sys_j: GaussianEigenSystem,
    *,
    margin: int = DEFAULT_NUMERICS.quadrature_margin,
) -> FloatArray:
    """Matrix of E e_k^i(X_i) e_l^j(X_j) for (X_i, X_j) ~ N(0, s2).

    Raises:
        SingularMatrixError: If s2 is degenerate.
    """
    s2 = np.asarray(s2, dtype=np.float64)
    if s2.shape != (2, 2):
        raise DimensionMismatchError("rows", 2, int(s2.shape[0]), "input covariance block")
    det = float(s2[0, 0] * s2[1, 1] - s2[0, 1] * s2[1, 0])
    if det <= DEGENERATE_TOL * s2[0, 0] * s2[1, 1]:
        raise SingularMatrixError("2x2 input covariance block", det, "inputs are perfectly correlated")
    ci, cj = sys_i.c, sys_j.c
    mixed = np.array(
        [[s2[0, 0] * ci, s2[0, 1] * np.sqrt(ci * cj)], [s2[1, 0] * np.sqrt(ci * cj), s2[1, 1] * cj]]
    )
    q = np.diag([0.5 * (1.0 - sys_i.a / ci), 0.5 * (1.0 - sys_j.a / cj)]) + 0.25 * np.linalg.inv(mixed)
    count = max(sys_i.truncation, sys_j.truncation)
    table = _d_tilde_table(q, count, margin)[: sys_i.truncation, : sys_j.truncation]
    front = (ci * cj / (sys_i.a * sys_j.a)) ** 0.25 / (4.0 * np.pi * np.sqrt(det * ci * cj))
    scale = np.sqrt(np.outer(sys_i.eigenvalues, sys_j.eigenvalues))
    return front * scale * table


def _check_input_covariance(s: FloatArray) -> None:
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionMismatchError("columns", int(s.shape[0]), int(s.shape[-1]), "input covariance")
    min_eig = float(np.linalg.eigvalsh(0.5 * (s + s.T))[0])
    if min_eig <= 0:
        raise NotPositiveSemidefiniteError("input covariance (must be positive definite)", min_eig)


def operator_model(
    s: ArrayLike,
    bandwidths: ArrayLike,
    truncation: int,
    *,
    margin: int = DEFAULT_NUMERICS.quadrature_margin,
) -> TruncatedOperatorModel:
    """Means and cross moments of every pair of groups, truncated at K."""
    s = np.asarray(s, dtype=np.float64)
    _check_input_covariance(s)
    bandwidths = np.asarray(bandwidths, dtype=np.float64).reshape(-1)
    m = s.shape[0]
    if bandwidths.shape[0] != m:
        raise DimensionMismatchError("groups", m, int(bandwidths.shape[0]), "bandwidths")
    systems = tuple(eigen_system(float(s[j, j]), float(bandwidths[j]), truncation) for j in range(m))
    means = np.vstack([eigenfunction_means(sys) for sys in systems])
    cross = np.empty((m, m, truncation, truncation))
    for i in range(m):
        cross[i, i] = np.diag(systems[i].eigenvalues)
        for j in range(i + 1, m):
            block = s[np.ix_([i, j], [i, j])]
            cross[i, j] = cross_moments(block, systems[i], systems[j], margin=margin)
            cross[j, i] = cross[i, j].T
    for arr in (means, cross):
        arr.setflags(write=False)
    return TruncatedOperatorModel(systems=systems, means=means, cross=cross, s=s)


def _pad_coords(f_coords: list[FloatArray] | list[list[float]], m: int, truncation: int) -> list[FloatArray]:
    if len(f_coords) != m:
        raise DimensionMismatchError("groups", m, len(f_coords), "f_coords")
    out = []
    for j, coords in enumerate(f_coords):
        arr = np.asarray(coords, dtype=np.float64).reshape(-1)
        if arr.shape[0] > truncation:
            raise DimensionMismatchError("truncation", truncation, int(arr.shape[0]), f"f_coords[{j}]")
        out.append(np.pad(arr, (0, truncation - arr.shape[0])))
    return out


def function_covariance(op: TruncatedOperatorModel, f_coords: list[FloatArray] | list[list[float]]) -> float:
    """Var(Σ_j f_j(X_j)) for functions given by eigenbasis coordinates."""
    f = _pad_coords(f_coords, op.m, op.truncation)
    total = 0.0
    for i in range(op.m):
        for j in range(op.m):
            total += float(f[i] @ op.covariance_block(i, j) @ f[j])
    return total


def analytic_condition(
    s: ArrayLike,
    bandwidths: ArrayLike,
    d: ArrayLike,
    pattern: SparsityPattern,
    f_coords: list[FloatArray] | list[list[float]],
    truncation: int | None = None,
    *,
    numerics: NumericsPort = DEFAULT_NUMERICS,
    op: TruncatedOperatorModel | None = None,
) -> ConditionReport:
    """Kernel consistency condition evaluated in closed form.

    For i ∈ Jᶜ the value is (1/d_i)‖Σ_{X_iX_J} Σ_{X_JX_J}⁻¹ h_J‖ with
    h_j = d_j f_j/‖f_j‖, all norms taken in the RKHS. The system is solved in
    L²-orthonormal coordinates of each group with the direction of the mean
    removed, where every centered diagonal block is the identity. The
    component of h_j along the removed direction is not in the range of the
    covariance operator and is dropped.

    Args:
        s: Input covariance (m, m).
        bandwidths: Kernel bandwidth b_j per group.
        d: Penalty weights.
        pattern: Active set J.
        f_coords: Coefficients of each f_j on e_0^j, e_1^j, ...; zero for inactive groups.
        truncation: Basis size K (defaults to ``numerics.truncation``).
        numerics: Supplies defaults and the boundary tolerance.
        op: Precomputed operator model to reuse.

    Raises:
        SingularMatrixError: If λ_{K−1}/λ_0 < 1e-12 (reduce K) or the active system is singular.
        ConditionUndefinedError: If J is empty or some f_j, j ∈ J, is zero.
    """
    truncation = numerics.truncation if truncation is None else truncation
    if op is None:
        op = operator_model(s, bandwidths, truncation, margin=numerics.quadrature_margin)
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    if d.shape[0] != op.m:
        raise DimensionMismatchError("groups", op.m, int(d.shape[0]), "weights")
    for j, sys in enumerate(op.systems):
        ratio = float(sys.eigenvalues[-1] / sys.eigenvalues[0])
        if ratio < EIGEN_RATIO_FLOOR:
            raise SingularMatrixError(
                f"truncated covariance of group {j}", ratio, f"reduce truncation K (currently {op.truncation})"
            )

    active = pattern.ordered()
    if not active:
        raise ConditionUndefinedError("condition is undefined for an empty active set")
    if active[-1] >= op.m:
        raise ValueError(f"pattern references groups beyond the {op.m} available")
    inactive = [i for i in range(op.m) if i not in pattern.active]
    f = _pad_coords(f_coords, op.m, op.truncation)

    sqrt_lam = [np.sqrt(sys.eigenvalues) for sys in op.systems]
    deflate = {j: linalg.null_space((op.means[j] / sqrt_lam[j])[None, :]) for j in range(op.m)}

    rhs: list[FloatArray] = []
    for j in active:
        norm = float(np.linalg.norm(f[j]))
        if norm == 0.0:
            raise ConditionUndefinedError(f"active group {j} has a zero function")
        rhs.append(deflate[j].T @ (d[j] * f[j] / norm / sqrt_lam[j]))

    def correlation(i: int, j: int) -> FloatArray:
        return op.cross[i, j] / np.outer(sqrt_lam[i], sqrt_lam[j])

    sizes = [deflate[j].shape[1] for j in active]
    system = np.zeros((sum(sizes), sum(sizes)))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for a, j in enumerate(active):
        for b, k in enumerate(active):
            if a == b:
                block = np.eye(sizes[a])
            else:
                block = deflate[j].T @ correlation(j, k) @ deflate[k]
            system[offsets[a] : offsets[a + 1], offsets[b] : offsets[b + 1]] = block
    system = 0.5 * (system + system.T)
    min_eig = float(np.linalg.eigvalsh(system)[0])
    if min_eig < DEGENERATE_TOL:
        raise SingularMatrixError("active covariance operator", min_eig)
    z = linalg.solve(system, np.concatenate(rhs), assume_a="pos")

    values: dict[int, float] = {}
    for i in inactive:
        v = np.zeros(op.truncation)
        for a, j in enumerate(active):
            v += correlation(i, j) @ (deflate[j] @ z[offsets[a] : offsets[a + 1]])
        values[i] = float(np.linalg.norm(sqrt_lam[i] * v)) / float(d[i])

    max_value = max(values.values(), default=0.0)
    logger.debug(f"analytic_condition: K={op.truncation} max={max_value:.6g}")
    return ConditionReport(
        per_group_values=values,
        max_value=max_value,
        verdict=Verdict.classify(max_value, numerics.boundary_tol),
    )


def range_projection(sys: GaussianEigenSystem, coords: ArrayLike) -> FloatArray:
    """Project f_j so that it satisfies the range condition exactly.

    Removes the component along q_k = E e_k / λ_k restricted to the support
    of ``coords``, so that h_j/sqrt(λ) is orthogonal to the mean direction
    and the support of f_j is unchanged.
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1)
    size = coords.shape[0]
    if size > sys.truncation:
        raise DimensionMismatchError("truncation", sys.truncation, size, "coords")
    q = eigenfunction_means(sys)[:size] / sys.eigenvalues[:size]
    return coords - q * float(q @ coords) / float(q @ q)
