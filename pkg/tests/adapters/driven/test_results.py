"""Tests for the result writers."""

import json
import tempfile
from collections.abc import Iterator
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src.adapters.driven.io.data_files import load_model
from src.adapters.driven.io.results import (
    SweepMeta,
    config_hash,
    git_revision,
    write_histogram,
    write_model,
    write_path,
    write_sweep,
)
from src.core.generators import gen_finite_model
from src.core.model import BlockStructure, EmpiricalMoments, PopulationModel
from src.core.solver import GridSpec, regularization_path
from src.core.sweep import (
    ClassificationResult,
    ExperimentConfig,
    ExperimentResult,
    PathClassification,
    Scenario,
    SweepCell,
    SweepGrid,
)

__all__ = []


@pytest.fixture
def out_dir() -> Iterator[Path]:
    """Temporary output directory.

    Yields:
        Directory path.
    """
    with tempfile.TemporaryDirectory() as d:
        yield Path(d)


def make_result(scenario: Scenario = Scenario.FINITE_CONSISTENT) -> ExperimentResult:
    config = ExperimentConfig(scenario=scenario, seed=5, n_grid=(10,), grid=SweepGrid(1, 1), replications=2)
    cells = tuple(
        SweepCell(
            n=10,
            grid_index=k,
            log10_ratio=-float(k),
            mean_reg=10.0**-k,
            pattern_freq=0.5 * k,
            log_mse=-1.0,
            ok=1,
            failures=1,
        )
        for k in range(2)
    )
    return ExperimentResult(
        config=config,
        cells=cells,
        condition_max=0.75,
        attempts=3,
        failure_messages=("n=10 job 1: ConvergenceError()",),
    )


def test_config_hash_ignores_key_order() -> None:
    """The hash depends on content only."""
    assert config_hash({"a": 1, "b": [2, 3]}) == config_hash({"b": [2, 3], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_git_revision_outside_checkout() -> None:
    """A directory that does not exist gives None rather than an error."""
    assert git_revision("/nonexistent/checkout") is None


def test_write_sweep_files(out_dir: Path) -> None:
    """cells.csv uses a lambda column; meta.json echoes the configuration."""
    result = make_result()
    cells_path, meta_path = write_sweep(result, out_dir / "run", git_hash="abc123")

    cells = pd.read_csv(cells_path)
    assert list(cells.columns) == [
        "n",
        "grid_index",
        "log10_ratio",
        "lambda",
        "pattern_freq",
        "log_mse",
        "ok",
        "failures",
    ]
    assert cells["lambda"].tolist() == [1.0, 0.1]

    meta = SweepMeta.model_validate_json(meta_path.read_text())
    assert meta.seed == 5
    assert meta.config_hash == config_hash(result.config.echo())
    assert meta.failures == 1
    assert meta.attempts == 3
    assert meta.git_hash == "abc123"
    assert meta.failure_messages == ["n=10 job 1: ConvergenceError()"]


def test_write_sweep_nonparametric_uses_mu(out_dir: Path) -> None:
    """The kernel scenario reports its absolute μ grid."""
    cells_path, _ = write_sweep(make_result(Scenario.NONPARAMETRIC), out_dir)

    assert "mu" in pd.read_csv(cells_path).columns


def test_write_sweep_is_byte_identical(out_dir: Path) -> None:
    """Writing the same result twice gives the same bytes."""
    first = write_sweep(make_result(), out_dir / "a")
    second = write_sweep(make_result(), out_dir / "b")

    for a, b in zip(first, second, strict=True):
        assert a.read_bytes() == b.read_bytes()


def test_write_sweep_reports_unwritable_directory(out_dir: Path) -> None:
    """A file in place of the directory is a ValueError."""
    blocker = out_dir / "blocker"
    blocker.write_text("")

    with pytest.raises(ValueError, match="Cannot create"):
        write_sweep(make_result(), blocker / "run")


def test_write_histogram_skips_empty_bins(out_dir: Path) -> None:
    """Only non-empty bins are written and their shares sum to one."""
    counts = np.array([[0, 0, 0], [2, 1, 1], [0, 0, 3]], dtype=np.int64)
    result = ClassificationResult(
        models=(PathClassification(model_index=0, condition_max=1.0, path_class=1),),
        bin_edges=np.array([-1.0, 0.0, 1.0, 2.0]),
        counts=counts,
        failures=0,
    )
    frame = pd.read_csv(write_histogram(result, out_dir / "hist.csv"))

    assert frame["log10_condition_lo"].tolist() == [0.0, 1.0]
    assert frame["count"].tolist() == [4, 3]
    np.testing.assert_allclose(frame[["class1", "class2", "class3"]].sum(axis=1), 1.0)
    assert frame["class1"].tolist() == [0.5, 0.0]


def test_write_path_columns(out_dir: Path) -> None:
    """One row per λ with η profile, bits and residual."""
    model = PopulationModel(sigma_xx=np.eye(3), w=np.array([1.0, 0.5, 0.0]))
    blocks = BlockStructure.uniform(3, 1)
    path_result = regularization_path(EmpiricalMoments.from_population(model), blocks, GridSpec(5, 1e-2))
    frame = pd.read_csv(write_path(path_result, blocks, out_dir / "path.csv"), dtype={"pattern_bits": str})

    assert list(frame.columns) == ["lambda", "eta_1", "eta_2", "eta_3", "pattern_bits", "kkt_residual"]
    assert len(frame) == 5
    assert frame["pattern_bits"].iloc[0] == "000"
    assert frame["pattern_bits"].iloc[-1] == "110"


def test_write_model_is_readable(out_dir: Path) -> None:
    """A written model loads back with its blocks."""
    fm = gen_finite_model(1)
    model, blocks = load_model(write_model(fm, out_dir / "model.json"))

    np.testing.assert_allclose(model.sigma_xx, fm.model.sigma_xx)
    assert blocks == fm.blocks
    assert json.loads((out_dir / "model.json").read_text())["group_sizes"] == [2, 2, 2, 2]
