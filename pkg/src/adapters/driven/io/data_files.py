"""Readers for the data and model files accepted by the command line."""

from __future__ import annotations

import json
import logging
import re
from pathlib import Path
from typing import TypeVar

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from src.core.model import BlockStructure, Dataset, PopulationModel

__all__ = [
    "BlocksFile",
    "ModelFile",
    "CovarianceFile",
    "load_dataset",
    "load_blocks",
    "load_model",
    "load_covariance",
    "load_f_coords",
]

logger = logging.getLogger(__name__)

_X_COLUMN = re.compile(r"^x(\d+)$")

M = TypeVar("M", bound=BaseModel)


class BlocksFile(BaseModel):
    """blocks.json: ``{"group_sizes": [2, 2], "weights": [1.0, 1.0]}``; weights default to 1."""

    group_sizes: list[int] = Field(..., min_length=1, description="Group sizes in column order.")
    weights: list[float] | None = Field(default=None, description="Penalty weights d_j.")

    @field_validator("group_sizes")
    @classmethod
    def validate_sizes(cls, v: list[int]) -> list[int]:
        if any(s <= 0 for s in v):
            raise ValueError(f"group sizes must be positive (got {v})")
        return v

    @model_validator(mode="after")
    def validate_weights(self) -> BlocksFile:
        if self.weights is not None:
            if len(self.weights) != len(self.group_sizes):
                raise ValueError(f"expected {len(self.group_sizes)} weights, got {len(self.weights)}")
            if any(w <= 0 for w in self.weights):
                raise ValueError(f"weights must be positive (got {self.weights})")
        return self

    def to_blocks(self) -> BlockStructure:
        weights = self.weights if self.weights is not None else [1.0] * len(self.group_sizes)
        return BlockStructure(group_sizes=tuple(self.group_sizes), weights=tuple(weights))


class ModelFile(BaseModel):
    """model.json: row-major Σ_XX, loadings w, noise sigma, intercept b, optional blocks."""

    sigma_xx: list[float] = Field(..., min_length=1, description="Covariance of X, row-major.")
    w: list[float] = Field(..., min_length=1, description="True loading vector.")
    sigma: float = Field(default=0.0, ge=0, description="Noise standard deviation.")
    b: float = Field(default=0.0, description="Intercept.")
    group_sizes: list[int] | None = None
    weights: list[float] | None = None

    @model_validator(mode="after")
    def validate_shape(self) -> ModelFile:
        p = len(self.w)
        if len(self.sigma_xx) != p * p:
            raise ValueError(f"sigma_xx must hold p*p = {p * p} entries for p = {p} (got {len(self.sigma_xx)})")
        return self

    def to_model(self) -> PopulationModel:
        p = len(self.w)
        return PopulationModel(
            sigma_xx=np.asarray(self.sigma_xx, dtype=np.float64).reshape(p, p),
            w=np.asarray(self.w, dtype=np.float64),
            b=self.b,
            sigma=self.sigma,
        )

    def to_blocks(self) -> BlockStructure | None:
        if self.group_sizes is None:
            return None
        return BlocksFile(group_sizes=self.group_sizes, weights=self.weights).to_blocks()


class CovarianceFile(BaseModel):
    """S json: ``{"S": [[1.0, 0.3], [0.3, 1.0]]}``."""

    s: list[list[float]] = Field(..., alias="S", min_length=1)

    @model_validator(mode="after")
    def validate_square(self) -> CovarianceFile:
        m = len(self.s)
        if any(len(row) != m for row in self.s):
            raise ValueError(f"S must be a square {m}x{m} matrix")
        return self


def _read_json(path: str | Path, what: str) -> object:
    path = Path(path)
    try:
        with path.open() as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise ValueError(f"{what} file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ValueError(f"{what} file contains invalid JSON: {path}") from e


def _parse(path: str | Path, model_cls: type[M], what: str) -> M:
    data = _read_json(path, what)
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        raise ValueError(f"Invalid {what} file {path}: {e.errors()[0]['msg']}") from e


def _x_index(column: object) -> int | None:
    match = _X_COLUMN.match(str(column))
    return int(match.group(1)) if match else None


def load_dataset(path: str | Path) -> Dataset:
    """Read a CSV with a ``y`` column and covariates ``x1..xp``.

    Covariate columns are ordered by their number, not by file position.

    Raises:
        ValueError: If the file is missing, lacks ``y`` or has no x columns.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as e:
        raise ValueError(f"Data file not found: {path}") from e
    if "y" not in frame.columns:
        raise ValueError(f"Data file {path} has no 'y' column")
    indexed = {c: _x_index(c) for c in frame.columns}
    x_cols = sorted((c for c, k in indexed.items() if k is not None), key=lambda c: indexed[c] or 0)
    if not x_cols:
        raise ValueError(f"Data file {path} has no covariate columns x1..xp")
    logger.debug(f"Loaded {len(frame)} rows and {len(x_cols)} covariates from {path}")
    return Dataset(x=frame[x_cols].to_numpy(dtype=np.float64), y=frame["y"].to_numpy(dtype=np.float64))


def load_blocks(path: str | Path) -> BlockStructure:
    return _parse(path, BlocksFile, "Blocks").to_blocks()


def load_model(path: str | Path) -> tuple[PopulationModel, BlockStructure | None]:
    """Read model.json; the block structure is returned when the file carries one."""
    parsed = _parse(path, ModelFile, "Model")
    return parsed.to_model(), parsed.to_blocks()


def load_covariance(path: str | Path) -> np.ndarray:
    return np.asarray(_parse(path, CovarianceFile, "Covariance").s, dtype=np.float64)


def load_f_coords(path: str | Path) -> list[np.ndarray]:
    """Read per-group eigenbasis coefficients: a JSON list of lists."""
    data = _read_json(path, "Function coefficient")
    if not isinstance(data, list) or not all(isinstance(row, list) for row in data):
        raise ValueError(f"Function coefficient file {path} must be a JSON array of arrays")
    try:
        return [np.asarray(row, dtype=np.float64) for row in data]
    except (TypeError, ValueError) as e:
        raise ValueError(f"Function coefficient file {path} contains non-numeric values") from e
