"""Tests for the command-line subcommands."""

import io
import json
import tempfile
from collections.abc import Iterator
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import pytest

from src.adapters.driven.config.settings import Settings
from src.adapters.driving.cli import build_parser, dispatch, parse_pattern

__all__ = []


@pytest.fixture
def workdir() -> Iterator[Path]:
    """Temporary directory holding the input files.

    Yields:
        Directory path.
    """
    with tempfile.TemporaryDirectory() as d:
        yield Path(d)


@pytest.fixture
def settings() -> Settings:
    return Settings(loading_free_restarts=5, mc_draws=2_000, max_workers=1, replications=2)


@pytest.fixture
def data_files(workdir: Path) -> tuple[Path, Path]:
    """data.csv with y = x1 + x2 + noise and blocks.json with two groups of two."""
    rng = np.random.default_rng(0)
    x = rng.standard_normal((100, 4))
    y = x[:, 0] + x[:, 1] + 0.01 * rng.standard_normal(100)
    frame = pd.DataFrame(x, columns=["x1", "x2", "x3", "x4"])
    frame["y"] = y
    data = workdir / "data.csv"
    frame.to_csv(data, index=False)
    blocks = workdir / "blocks.json"
    blocks.write_text(json.dumps({"group_sizes": [2, 2]}))
    return data, blocks


async def run(argv: list[str], settings: Settings) -> dict[str, Any]:
    """Parse, dispatch and decode the JSON printed by a subcommand."""
    out = io.StringIO()
    status = await dispatch(build_parser().parse_args(argv), settings, out=out)
    assert status == 0
    return json.loads(out.getvalue())


def test_parse_pattern() -> None:
    """Patterns are 1-based on the command line and 0-based inside."""
    assert parse_pattern("1,3").ordered() == [0, 2]
    assert parse_pattern(" 2 ").ordered() == [1]
    with pytest.raises(ValueError, match="start at 1"):
        parse_pattern("0,1")
    with pytest.raises(ValueError, match="comma-separated"):
        parse_pattern("a,b")


def test_parser_requires_subcommand() -> None:
    """Running without a subcommand is a usage error."""
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


@pytest.mark.asyncio
async def test_solve_lambda(data_files: tuple[Path, Path], settings: Settings) -> None:
    """A moderate λ keeps only the first group."""
    data, blocks = data_files
    payload = await run(["solve", "--data", str(data), "--blocks", str(blocks), "--lambda", "0.5"], settings)

    assert payload["pattern"] == [1]
    assert payload["formulation"] == "lambda"
    assert len(payload["w"]) == 4
    assert payload["kkt_residual"] <= 1e-6


@pytest.mark.asyncio
async def test_solve_squared_and_adaptive(data_files: tuple[Path, Path], settings: Settings) -> None:
    """--squared and --adaptive need --mu and report the μ formulation."""
    data, blocks = data_files
    base = ["solve", "--data", str(data), "--blocks", str(blocks)]

    squared = await run([*base, "--squared", "--mu", "0.1"], settings)
    assert squared["formulation"] == "mu"
    adaptive = await run([*base, "--adaptive", "--mu", "0.1", "--gamma", "1"], settings)
    assert adaptive["weights"][1] > 10 * adaptive["weights"][0]

    for extra in (["--squared"], ["--adaptive"], []):
        with pytest.raises(ValueError):
            await dispatch(build_parser().parse_args([*base, *extra]), settings, out=io.StringIO())


@pytest.mark.asyncio
async def test_path_writes_csv(data_files: tuple[Path, Path], settings: Settings, workdir: Path) -> None:
    """The path command writes one row per grid point."""
    data, blocks = data_files
    target = workdir / "out" / "path.csv"
    payload = await run(
        ["path", "--data", str(data), "--blocks", str(blocks), "--points", "7", "--out", str(target)],
        settings,
    )

    assert payload["points"] == 7
    assert len(pd.read_csv(target)) == 7


@pytest.mark.asyncio
async def test_check_boundary_model(workdir: Path, settings: Settings) -> None:
    """The boundary example reports WeakBoundary with all bounds."""
    model = workdir / "model.json"
    model.write_text(
        json.dumps(
            {
                "sigma_xx": [1.0, 0.0, 0.5, 0.0, 1.0, 0.5, 0.5, 0.5, 1.0],
                "w": [1.0, 2.0, 0.0],
                "sigma": 1.0,
                "group_sizes": [1, 1, 1],
            }
        )
    )
    payload = await run(["check", "--model", str(model), "--lambda0", "1.0", "--draws", "500"], settings)

    assert payload["verdict"] == "WeakBoundary"
    assert payload["per_group_values"]["3"] == pytest.approx(1.0)
    bounds = payload["bounds"]
    assert bounds["sdp"] <= bounds["spectral"] + 1e-9
    assert bounds["loading_free"] >= payload["max_value"] - 1e-6
    assert payload["pattern_prob"]["draws"] == 500


@pytest.mark.asyncio
async def test_check_requires_blocks(workdir: Path, settings: Settings) -> None:
    """A model without group sizes needs --blocks."""
    model = workdir / "model.json"
    model.write_text(json.dumps({"sigma_xx": [1.0, 0.0, 0.0, 1.0], "w": [1.0, 0.0]}))

    with pytest.raises(ValueError, match="--blocks"):
        await dispatch(build_parser().parse_args(["check", "--model", str(model)]), settings, out=io.StringIO())


@pytest.mark.asyncio
async def test_mkl_linear(data_files: tuple[Path, Path], settings: Settings) -> None:
    """Linear-kernel MKL reports a normalized η and a small duality gap."""
    data, blocks = data_files
    payload = await run(
        ["mkl", "--data", str(data), "--blocks", str(blocks), "--kernel", "linear", "--mu", "0.01"],
        settings,
    )

    assert len(payload["eta"]) == 2
    assert sum(payload["eta"]) == pytest.approx(1.0)
    assert payload["duality_gap"] <= 1e-6
    assert 1 in payload["pattern"]


@pytest.mark.asyncio
async def test_mkl_check_condition(data_files: tuple[Path, Path], settings: Settings) -> None:
    """The kernel condition estimate covers the inactive group."""
    data, blocks = data_files
    base = ["mkl-check-condition", "--data", str(data), "--blocks", str(blocks), "--pattern", "1"]
    payload = await run([*base, "--kernel", "linear"], settings)

    assert set(payload["per_group_estimates"]) == {"2"}
    assert payload["kappa"] == pytest.approx(100 ** (-1.0 / 3.0))
    with pytest.raises(ValueError, match="--kappa"):
        await dispatch(build_parser().parse_args([*base, "--kappa", "big"]), settings, out=io.StringIO())


@pytest.mark.asyncio
async def test_gaussian_condition(workdir: Path, settings: Settings) -> None:
    """An independent third input gives a strict verdict."""
    s = workdir / "s.json"
    s.write_text(json.dumps({"S": [[1.0, 0.4, 0.0], [0.4, 1.0, 0.0], [0.0, 0.0, 1.0]]}))
    f = workdir / "f.json"
    f.write_text(json.dumps([[0.0, 1.0], [0.0, 0.0, 1.0], []]))
    payload = await run(
        [
            "gaussian-cond",
            "--S",
            str(s),
            "--bandwidths",
            "1,1,1",
            "--pattern",
            "1,2",
            "--fcoords",
            str(f),
            "--trunc",
            "20",
        ],
        settings,
    )

    assert payload["verdict"] == "StrictHolds"
    assert payload["per_group_values"]["3"] == pytest.approx(0.0, abs=1e-8)


@pytest.mark.asyncio
async def test_experiment_writes_results(workdir: Path, settings: Settings) -> None:
    """A tiny finite sweep writes cells.csv and meta.json."""
    out_dir = workdir / "sweep"
    argv = [
        "experiment",
        "--scenario",
        "finite-consistent",
        "--reps",
        "2",
        "--n-grid",
        "30,60",
        "--points-per-decade",
        "2",
        "--decades",
        "1",
        "--out",
        str(out_dir),
    ]
    payload = await run(argv, settings)

    assert Path(payload["cells"]).is_file()
    meta = json.loads(Path(payload["meta"]).read_text())
    assert meta["config"]["n_grid"] == [30, 60]
    assert len(pd.read_csv(payload["cells"])) == 2 * 3


@pytest.mark.asyncio
async def test_classify_writes_histogram(workdir: Path, settings: Settings) -> None:
    """A tiny classification writes the histogram file."""
    target = workdir / "hist.csv"
    argv = [
        "classify",
        "--count",
        "2",
        "--n",
        "50",
        "--points-per-decade",
        "2",
        "--decades",
        "1",
        "--out",
        str(target),
    ]
    payload = await run(argv, settings)

    assert target.is_file()
    assert payload["models"] + payload["failures"] == 2
