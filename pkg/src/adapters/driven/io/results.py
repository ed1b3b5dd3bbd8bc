"""Writers for sweep, classification and path results.

Outputs contain no timestamps, so identical configurations produce
byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import logging
import subprocess
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from src.core.generators import FiniteModel
from src.core.model import BlockStructure
from src.core.solver import PathResult
from src.core.sweep import ClassificationResult, ExperimentResult

__all__ = [
    "SweepMeta",
    "config_hash",
    "git_revision",
    "write_sweep",
    "write_histogram",
    "write_path",
    "write_model",
]

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"


class SweepMeta(BaseModel):
    """meta.json sidecar written next to cells.csv."""

    config: dict[str, object]
    seed: int
    config_hash: str
    attempts: int = Field(..., ge=0, description="Rejection-sampling attempts of the model draw.")
    condition_max: float
    failures: int = Field(..., ge=0)
    failure_messages: list[str] = Field(default_factory=list)
    git_hash: str | None = None


def config_hash(echo: dict[str, object]) -> str:
    """SHA-256 of the canonical JSON rendering of a configuration echo."""
    return hashlib.sha256(json.dumps(echo, sort_keys=True).encode()).hexdigest()


def git_revision(cwd: str | Path | None = None) -> str | None:
    """Current commit hash, or None outside a git checkout."""
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=cwd,
            capture_output=True,
            text=True,
            check=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


def _ensure_dir(out_dir: str | Path) -> Path:
    path = Path(out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ValueError(f"Cannot create output directory {path}: {e}") from e
    return path


def write_sweep(result: ExperimentResult, out_dir: str | Path, *, git_hash: str | None = None) -> tuple[Path, Path]:
    """Write cells.csv and meta.json.

    Returns:
        Paths of the two files.
    """
    path = _ensure_dir(out_dir)
    cells = pd.DataFrame([asdict(c) for c in result.cells])
    if result.config.scenario == "nonparametric":
        cells = cells.rename(columns={"mean_reg": "mu"})
    else:
        cells = cells.rename(columns={"mean_reg": "lambda"})
    cells_path = path / "cells.csv"
    cells.to_csv(cells_path, index=False, float_format=FLOAT_FORMAT)

    echo = result.config.echo()
    failures = sum(c.failures for c in result.cells if c.grid_index == 0)
    meta = SweepMeta(
        config=echo,
        seed=result.config.seed,
        config_hash=config_hash(echo),
        attempts=result.attempts,
        condition_max=result.condition_max,
        failures=failures,
        failure_messages=list(result.failure_messages),
        git_hash=git_hash,
    )
    meta_path = path / "meta.json"
    meta_path.write_text(meta.model_dump_json(indent=2) + "\n")
    logger.info(f"Wrote {len(cells)} cells to {cells_path}")
    return cells_path, meta_path


def write_histogram(result: ClassificationResult, path: str | Path) -> Path:
    """CSV with one row per non-empty condition bin: bounds, count, class shares."""
    target = Path(path)
    _ensure_dir(target.parent)
    totals = result.counts.sum(axis=1)
    keep = np.flatnonzero(totals > 0)
    shares = result.proportions()
    frame = pd.DataFrame(
        {
            "log10_condition_lo": result.bin_edges[keep],
            "log10_condition_hi": result.bin_edges[keep + 1],
            "count": totals[keep],
            "class1": shares[:, 0],
            "class2": shares[:, 1],
            "class3": shares[:, 2],
        }
    )
    frame.to_csv(target, index=False, float_format=FLOAT_FORMAT)
    return target


def write_path(path_result: PathResult, blocks: BlockStructure, path: str | Path) -> Path:
    """CSV with one row per λ: η profile, pattern bits and KKT residual."""
    target = Path(path)
    _ensure_dir(target.parent)
    frame = pd.DataFrame({"lambda": path_result.grid})
    for j in range(blocks.m):
        frame[f"eta_{j + 1}"] = path_result.eta_profiles[:, j]
    frame["pattern_bits"] = [sol.pattern.bits(blocks.m) for sol in path_result.solutions]
    frame["kkt_residual"] = [sol.kkt_residual for sol in path_result.solutions]
    frame.to_csv(target, index=False, float_format=FLOAT_FORMAT)
    return target


def write_model(fm: FiniteModel, path: str | Path) -> Path:
    """model.json readable by ``load_model``."""
    target = Path(path)
    _ensure_dir(target.parent)
    payload = {
        "sigma_xx": fm.model.sigma_xx.reshape(-1).tolist(),
        "w": fm.model.w.tolist(),
        "sigma": fm.model.sigma,
        "b": fm.model.b,
        "group_sizes": list(fm.blocks.group_sizes),
        "weights": list(fm.blocks.weights),
    }
    target.write_text(json.dumps(payload, indent=2) + "\n")
    return target
