"""Shared data model: block structures, datasets, empirical moments, patterns.

Group indices are 0-based inside the package; the CLI converts from the
1-based numbering users type.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from src.core.errors import DimensionMismatchError, NotPositiveSemidefiniteError

__all__ = [
    "BlockStructure",
    "PopulationModel",
    "Dataset",
    "EmpiricalMoments",
    "SparsityPattern",
    "centering_matrix",
    "empirical_moments",
    "pattern_of",
    "relative_pattern",
    "eta_profile",
    "intercept_of",
    "sample_dataset",
]

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-10

FloatArray = NDArray[np.float64]


def _frozen(values: ArrayLike, ndim: int, what: str) -> FloatArray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionMismatchError("ndim", ndim, arr.ndim, what)
    arr.setflags(write=False)
    return arr


@dataclass(slots=True, frozen=True)
class BlockStructure:
    """Partition of p covariates into m contiguous groups with penalty weights.

    Attributes:
        group_sizes: Sizes p_1..p_m of the groups, in column order.
        weights: Positive penalty weights d_1..d_m.
    """

    group_sizes: tuple[int, ...]
    weights: tuple[float, ...]
    offsets: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.group_sizes)
        weights = tuple(float(d) for d in self.weights)
        if not sizes:
            raise ValueError("block structure needs at least one group")
        if any(s < 1 for s in sizes):
            raise ValueError(f"group sizes must be positive integers (got {sizes})")
        if len(weights) != len(sizes):
            raise DimensionMismatchError("groups", len(sizes), len(weights), "weights")
        if any(not np.isfinite(d) or d <= 0 for d in weights):
            raise ValueError(f"weights must be positive and finite (got {weights})")
        object.__setattr__(self, "group_sizes", sizes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "offsets", tuple(int(o) for o in np.cumsum((0, *sizes))))

    @classmethod
    def uniform(cls, m: int, size: int, weight: float = 1.0) -> BlockStructure:
        """Build m groups of identical size and weight."""
        return cls(group_sizes=(size,) * m, weights=(weight,) * m)

    @property
    def m(self) -> int:
        return len(self.group_sizes)

    @property
    def p(self) -> int:
        return self.offsets[-1]

    @property
    def d(self) -> FloatArray:
        return np.asarray(self.weights, dtype=np.float64)

    def span(self, j: int) -> slice:
        """Column range of group j."""
        return slice(self.offsets[j], self.offsets[j + 1])

    def indices(self, groups: Iterable[int]) -> NDArray[np.intp]:
        """Concatenated column indices of the given groups, in the given order."""
        parts = [np.arange(self.offsets[j], self.offsets[j + 1]) for j in groups]
        if not parts:
            return np.zeros(0, dtype=np.intp)
        return np.concatenate(parts).astype(np.intp)

    def split(self, w: FloatArray) -> list[FloatArray]:
        """Split a length-p vector into its group sub-vectors."""
        self.check_length(w, "vector")
        return [w[self.span(j)] for j in range(self.m)]

    def norms(self, w: FloatArray) -> FloatArray:
        """Euclidean norm of every group of w."""
        return np.array([np.linalg.norm(part) for part in self.split(w)])

    def with_weights(self, weights: Sequence[float] | FloatArray) -> BlockStructure:
        return BlockStructure(group_sizes=self.group_sizes, weights=tuple(float(x) for x in weights))

    def check_length(self, v: FloatArray, what: str) -> None:
        if v.shape[0] != self.p:
            raise DimensionMismatchError("p", self.p, int(v.shape[0]), what)


@dataclass(slots=True, frozen=True)
class SparsityPattern:
    """Set of active (nonzero) groups."""

    active: frozenset[int]

    def __post_init__(self) -> None:
        active = frozenset(int(j) for j in self.active)
        if any(j < 0 for j in active):
            raise ValueError(f"group indices must be non-negative (got {sorted(active)})")
        object.__setattr__(self, "active", active)

    @classmethod
    def of(cls, groups: Iterable[int]) -> SparsityPattern:
        return cls(active=frozenset(groups))

    def validate(self, blocks: BlockStructure) -> None:
        """Raise if any index falls outside the block structure."""
        bad = sorted(j for j in self.active if j >= blocks.m)
        if bad:
            raise ValueError(f"pattern references groups {bad} but only {blocks.m} exist")

    def ordered(self) -> list[int]:
        return sorted(self.active)

    def complement(self, blocks: BlockStructure) -> list[int]:
        return [j for j in range(blocks.m) if j not in self.active]

    def bits(self, m: int) -> str:
        """Pattern as a string of m characters, '1' for active groups."""
        return "".join("1" if j in self.active else "0" for j in range(m))


@dataclass(slots=True, frozen=True)
class PopulationModel:
    """Ground-truth joint model of (X, Y).

    Attributes:
        sigma_xx: Positive definite covariance of X.
        w: True loading vector.
        b: Intercept.
        sigma: Noise standard deviation.
    """

    sigma_xx: FloatArray
    w: FloatArray
    b: float = 0.0
    sigma: float = 0.0

    def __post_init__(self) -> None:
        s = _frozen(self.sigma_xx, 2, "sigma_xx")
        w = _frozen(self.w, 1, "w")
        if s.shape[0] != s.shape[1]:
            raise DimensionMismatchError("columns", s.shape[0], s.shape[1], "sigma_xx")
        if w.shape[0] != s.shape[0]:
            raise DimensionMismatchError("p", s.shape[0], w.shape[0], "w")
        asym = float(np.max(np.abs(s - s.T))) if s.size else 0.0
        if asym > SYMMETRY_TOL:
            raise ValueError(f"sigma_xx is not symmetric (max asymmetry {asym:.3e})")
        min_eig = float(np.linalg.eigvalsh(s)[0])
        if min_eig <= 0:
            raise NotPositiveSemidefiniteError("sigma_xx (must be positive definite)", min_eig)
        if self.sigma < 0:
            raise ValueError(f"noise level must be non-negative (got {self.sigma})")
        object.__setattr__(self, "sigma_xx", s)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def p(self) -> int:
        return int(self.w.shape[0])

    def pattern(self, blocks: BlockStructure) -> SparsityPattern:
        """True sparsity pattern J (groups with a nonzero loading)."""
        return pattern_of(self.w, blocks, 0.0)

    def signal_std(self) -> float:
        """(E (wᵀX)²)^(1/2) for centered X."""
        return float(np.sqrt(self.w @ self.sigma_xx @ self.w))


@dataclass(slots=True, frozen=True)
class Dataset:
    """n observations of (X, Y)."""

    x: FloatArray
    y: FloatArray

    def __post_init__(self) -> None:
        x = _frozen(self.x, 2, "x")
        y = _frozen(self.y, 1, "y")
        if x.shape[0] != y.shape[0]:
            raise DimensionMismatchError("rows", x.shape[0], y.shape[0], "y")
        if x.shape[0] < 2:
            raise ValueError(f"a dataset needs at least 2 rows (got {x.shape[0]})")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])


@dataclass(slots=True, frozen=True)
class EmpiricalMoments:
    """Centered second moments of a dataset (or of a population model).

    Attributes:
        s_yy: (1/n) Yᵀ Π Y.
        s_xy: (1/n) Xᵀ Π Y.
        s_xx: (1/n) Xᵀ Π X, exactly symmetric.
        n: Sample count; 0 marks population moments.
        x_mean: Column means of X (zero for population moments).
        y_mean: Mean of Y.
    """

    s_yy: float
    s_xy: FloatArray
    s_xx: FloatArray
    n: int
    x_mean: FloatArray
    y_mean: float = 0.0

    @classmethod
    def from_population(cls, model: PopulationModel) -> EmpiricalMoments:
        """Moments of the population problem: s_xx = Σ, s_xy = Σ w."""
        s_xy = model.sigma_xx @ model.w
        s_yy = float(model.w @ s_xy + model.sigma**2)
        return cls(
            s_yy=s_yy,
            s_xy=_frozen(s_xy, 1, "s_xy"),
            s_xx=model.sigma_xx,
            n=0,
            x_mean=_frozen(np.zeros(model.p), 1, "x_mean"),
            y_mean=model.b,
        )

    @property
    def p(self) -> int:
        return int(self.s_xy.shape[0])


def centering_matrix(n: int) -> FloatArray:
    """Π_n = I_n − (1/n) 1 1ᵀ."""
    if n < 1:
        raise ValueError(f"n must be positive (got {n})")
    return np.eye(n) - np.full((n, n), 1.0 / n)


def empirical_moments(data: Dataset, blocks: BlockStructure) -> EmpiricalMoments:
    """Compute the centered empirical covariances of a dataset.

    Uses centered Gram products, which equal (1/n) XᵀΠ_nX without forming Π_n.

    Args:
        data: Observations.
        blocks: Block structure the columns of X must match.

    Returns:
        Empirical moments with an exactly symmetric s_xx.

    Raises:
        DimensionMismatchError: If X does not have blocks.p columns.
        NotPositiveSemidefiniteError: If s_xx is clearly indefinite.
    """
    if data.x.shape[1] != blocks.p:
        raise DimensionMismatchError("columns", blocks.p, int(data.x.shape[1]), "design matrix")
    n = data.n
    x_mean = data.x.mean(axis=0)
    y_mean = float(data.y.mean())
    xc = data.x - x_mean
    yc = data.y - y_mean
    s_xx = (xc.T @ xc) / n
    s_xx = 0.5 * (s_xx + s_xx.T)
    if s_xx.size:
        scale = max(1.0, float(np.max(np.abs(np.diag(s_xx)))))
        min_eig = float(np.linalg.eigvalsh(s_xx)[0])
        if min_eig < -PSD_TOL * scale:
            raise NotPositiveSemidefiniteError("empirical covariance s_xx", min_eig)
    return EmpiricalMoments(
        s_yy=float(yc @ yc) / n,
        s_xy=_frozen((xc.T @ yc) / n, 1, "s_xy"),
        s_xx=_frozen(s_xx, 2, "s_xx"),
        n=n,
        x_mean=_frozen(x_mean, 1, "x_mean"),
        y_mean=y_mean,
    )


def pattern_of(w: FloatArray, blocks: BlockStructure, tol: float) -> SparsityPattern:
    """Groups whose norm is strictly above tol."""
    if tol < 0:
        raise ValueError(f"tol must be non-negative (got {tol})")
    norms = blocks.norms(np.asarray(w, dtype=np.float64))
    return SparsityPattern.of(j for j in range(blocks.m) if norms[j] > tol)


def relative_pattern(w: FloatArray, blocks: BlockStructure, rel_tol: float) -> SparsityPattern:
    """pattern_of with a threshold relative to ‖w‖."""
    return pattern_of(w, blocks, rel_tol * float(np.linalg.norm(w)))


def eta_profile(w: FloatArray, blocks: BlockStructure) -> FloatArray:
    """η̂_j = d_j‖w_j‖ / Σ_i d_i‖w_i‖, all zeros when w = 0."""
    weighted = blocks.d * blocks.norms(np.asarray(w, dtype=np.float64))
    total = float(weighted.sum())
    if total == 0.0:
        return np.zeros(blocks.m)
    return weighted / total


def intercept_of(moments: EmpiricalMoments, w: FloatArray) -> float:
    """b̂ = mean(y) − mean(x)ᵀw."""
    return float(moments.y_mean - moments.x_mean @ w)


def sample_dataset(model: PopulationModel, n: int, rng: np.random.Generator) -> Dataset:
    """Draw X ~ N(0, Σ) and Y = wᵀX + b + ε with ε ~ N(0, σ²)."""
    chol = np.linalg.cholesky(model.sigma_xx)
    x = rng.standard_normal((n, model.p)) @ chol.T
    y = x @ model.w + model.b + model.sigma * rng.standard_normal(n)
    return Dataset(x=x, y=y)
