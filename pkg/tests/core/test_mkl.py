"""Tests for the kernelized group Lasso solver and its kernel condition estimate."""

import logging

import numpy as np
import pytest

from src.core.consistency import condition_value
from src.core.errors import ConditionUndefinedError, DimensionMismatchError, NotPositiveSemidefiniteError
from src.core.generators import gen_nonparametric_model, nonparametric_condition, sample_nonparametric
from src.core.mkl import (
    KernelKind,
    KernelProblem,
    KernelSpec,
    adaptive_kernel_weights,
    adaptive_mkl,
    estimate_condition,
    fitted_values,
    kappa_schedule,
    kernel_matrix,
    kernel_problem,
    ls_kernel_estimate,
    mkl_kkt_check,
    mkl_solve,
    predict,
    trace_weights,
)
from src.core.model import (
    BlockStructure,
    Dataset,
    PopulationModel,
    SparsityPattern,
    empirical_moments,
    relative_pattern,
    sample_dataset,
)
from src.core.rng import stream
from src.core.solver import solve_fixed_mu
from src.ports.settings import DEFAULT_NUMERICS, NumericsPort

__all__ = []

TIGHT = NumericsPort(mkl_gap_tol=1e-12, mkl_max_iter=50_000)


def linear_data(seed: int = 0, n: int = 80) -> tuple[Dataset, BlockStructure]:
    """Three groups of two columns, all carrying signal."""
    rng = np.random.default_rng(seed)
    blocks = BlockStructure(group_sizes=(2, 2, 2), weights=(1.0, 1.5, 0.8))
    x = rng.standard_normal((n, 6))
    w = np.array([1.0, -1.0, 0.5, 0.5, 2.0, 0.3])
    y = x @ w + 0.1 * rng.standard_normal(n) + 3.0
    return Dataset(x=x, y=y), blocks


def violated_model() -> PopulationModel:
    """Scalar groups; the inactive third covariate loads 0.6 on both active ones (condition value 1.2)."""
    sigma = np.array([[1.0, 0.0, 0.6], [0.0, 1.0, 0.6], [0.6, 0.6, 1.0]])
    w = np.array([1.0, 1.0, 0.0])
    return PopulationModel(sigma_xx=sigma, w=w, sigma=0.2 * float(np.sqrt(w @ sigma @ w)))


def exact_moment_data(model: PopulationModel, n: int, seed: int = 0) -> Dataset:
    """Noise-free sample whose centered covariance equals Σ exactly."""
    z = np.random.default_rng(seed).standard_normal((n, model.p))
    q, _ = np.linalg.qr(z - z.mean(axis=0))
    x = np.sqrt(n) * q @ np.linalg.cholesky(model.sigma_xx).T
    return Dataset(x=x, y=x @ model.w + 1.0)


def test_kernel_spec_parse() -> None:
    """Linear and Gaussian specs are parsed; bad ones are rejected."""
    assert KernelSpec.parse("linear").kind is KernelKind.LINEAR
    spec = KernelSpec.parse("Gaussian:b=2.5")
    assert spec.kind is KernelKind.GAUSSIAN
    assert spec.bandwidth == pytest.approx(2.5)

    for text in ("polynomial", "gaussian", "gaussian:c=1"):
        with pytest.raises(ValueError):
            KernelSpec.parse(text)
    with pytest.raises(ValueError, match="positive bandwidth"):
        KernelSpec(kind=KernelKind.GAUSSIAN, bandwidth=-1.0)


def test_gaussian_kernel_entries() -> None:
    """k(0, 1) = exp(−b) with unit diagonal."""
    k = kernel_matrix(KernelSpec(kind=KernelKind.GAUSSIAN, bandwidth=1.0), np.array([0.0, 1.0]))

    np.testing.assert_allclose(k, [[1.0, np.exp(-1.0)], [np.exp(-1.0), 1.0]])
    with pytest.raises(ValueError, match="non-finite"):
        kernel_matrix(KernelSpec(kind=KernelKind.LINEAR), np.array([0.0, np.inf]))


def test_kernel_problem_validation() -> None:
    """Shapes, weights and positive semidefiniteness are checked."""
    eye = np.eye(2)
    with pytest.raises(DimensionMismatchError):
        KernelProblem(kernels=(eye, eye), y=np.zeros(2), weights=(1.0,))
    with pytest.raises(ValueError, match="positive"):
        KernelProblem(kernels=(eye,), y=np.zeros(2), weights=(0.0,))
    with pytest.raises(DimensionMismatchError):
        KernelProblem(kernels=(np.eye(3),), y=np.zeros(2), weights=(1.0,))
    with pytest.raises(NotPositiveSemidefiniteError):
        KernelProblem(kernels=(np.array([[1.0, 2.0], [2.0, 1.0]]),), y=np.zeros(2), weights=(1.0,))


def test_trace_weights_of_linear_kernel() -> None:
    """d_j is the empirical standard deviation of a single column."""
    x = np.array([1.0, 2.0, 4.0, 7.0])
    k = kernel_matrix(KernelSpec(kind=KernelKind.LINEAR), x)

    assert trace_weights([k])[0] == pytest.approx(float(np.std(x)))


def test_single_kernel_is_kernel_ridge() -> None:
    """With m = 1 the solution solves (ΠKΠ/d² + nμI)α = ΠȲ."""
    data, _ = linear_data()
    blocks = BlockStructure(group_sizes=(6,), weights=(2.0,))
    prob = kernel_problem(data, blocks, KernelSpec(kind=KernelKind.GAUSSIAN, bandwidth=0.2))
    mu = 0.05
    sol = mkl_solve(prob, mu, numerics=TIGHT)

    expected = np.linalg.solve(prob.centered[0] / 4.0 + prob.n * mu * np.eye(prob.n), prob.y_centered)
    np.testing.assert_allclose(sol.alpha, expected, rtol=1e-7, atol=1e-10)
    assert sol.eta[0] == pytest.approx(0.25)
    assert sol.duality_gap <= 1e-10


def test_linear_kernels_match_group_lasso() -> None:
    """Linear kernels reproduce the squared-norm group Lasso norms."""
    data, blocks = linear_data()
    mu = 1e-3
    sol = mkl_solve(kernel_problem(data, blocks, KernelSpec(kind=KernelKind.LINEAR)), mu, numerics=TIGHT)
    reference = solve_fixed_mu(empirical_moments(data, blocks), blocks, mu)

    np.testing.assert_allclose(sol.norms, blocks.norms(reference.w), rtol=1e-5, atol=1e-8)


def test_solution_passes_kkt_check() -> None:
    """A certified solution has small violations; a perturbed one does not."""
    data, blocks = linear_data(seed=1)
    prob = kernel_problem(data, blocks, KernelSpec(kind=KernelKind.GAUSSIAN, bandwidth=0.5))
    sol = mkl_solve(prob, 0.01, numerics=TIGHT)

    assert mkl_kkt_check(prob, sol) <= 1e-4
    assert float(sol.eta @ prob.d**2) == pytest.approx(1.0)
    perturbed = type(sol)(
        alpha=sol.alpha,
        eta=2.0 * sol.eta,
        norms=sol.norms,
        mu=sol.mu,
        duality_gap=sol.duality_gap,
        primal=sol.primal,
        iterations=sol.iterations,
        weights=sol.weights,
    )
    assert mkl_kkt_check(prob, perturbed) >= 0.5


def test_predict_matches_fitted_values_up_to_constant() -> None:
    """Uncentered predictions on the training inputs differ from the fit by a constant."""
    data, blocks = linear_data(seed=2, n=40)
    specs = [KernelSpec(kind=KernelKind.GAUSSIAN, bandwidth=1.0)] * 3
    prob = kernel_problem(data, blocks, specs)
    sol = mkl_solve(prob, 0.05)
    diff = predict(sol, list(prob.kernels)) - fitted_values(prob, sol)

    np.testing.assert_allclose(diff - diff.mean(), 0.0, atol=1e-8)


def test_mkl_solve_rejects_bad_arguments() -> None:
    """μ must be positive and n within the configured cap."""
    data, blocks = linear_data(n=20)
    prob = kernel_problem(data, blocks, KernelSpec(kind=KernelKind.LINEAR))
    with pytest.raises(ValueError):
        mkl_solve(prob, 0.0)
    with pytest.raises(ValueError, match="cap"):
        mkl_solve(prob, 0.1, numerics=NumericsPort(mkl_max_n=10))


def test_ls_kernel_estimate_is_ridge_regression() -> None:
    """Linear kernels give ridge fitted values and ‖w_j‖ as norms."""
    data, blocks = linear_data(seed=3)
    prob = kernel_problem(data, blocks, KernelSpec(kind=KernelKind.LINEAR))
    kappa = 0.1
    fit = ls_kernel_estimate(prob, kappa)

    xc = data.x - data.x.mean(axis=0)
    w = np.linalg.solve(xc.T @ xc + prob.n * kappa * np.eye(6), xc.T @ prob.y_centered)
    np.testing.assert_allclose(sum(prob.centered) @ fit.alpha, xc @ w, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(fit.norms, blocks.norms(w), rtol=1e-8)

    partial = ls_kernel_estimate(prob, kappa, groups=[0])
    assert partial.norms[1] == 0.0
    assert partial.norms[2] == 0.0
    with pytest.raises(ValueError):
        ls_kernel_estimate(prob, 0.0)


def test_kappa_schedule() -> None:
    """κ_n = κ₀ n^(−1/3)."""
    assert kappa_schedule(8, 2.0) == pytest.approx(1.0)
    assert kappa_schedule(1000, 1.0) == pytest.approx(0.1)


def test_adaptive_mkl_weights_and_warning(caplog: pytest.LogCaptureFixture) -> None:
    """Adaptive weights are rescaled to a unit minimum; γ ≤ 1 logs a warning."""
    data, blocks = linear_data(seed=4)
    prob = kernel_problem(data, blocks, KernelSpec(kind=KernelKind.LINEAR))

    sol = adaptive_mkl(prob, 0.01, 2.0)
    assert min(sol.weights) == pytest.approx(1.0)
    assert sol.mu == pytest.approx(0.01 * prob.n ** (-1.0 / 3.0))

    with caplog.at_level(logging.WARNING, logger="src.core.mkl"):
        adaptive_mkl(prob, 0.01, 1.0)
    assert any("gamma" in record.getMessage() for record in caplog.records)


def test_estimate_condition_matches_linear_formula() -> None:
    """Linear kernels give ‖X̄_iᵀX̄_J(X̄_JᵀX̄_J + nκI)⁻¹h‖, h_j = d_j w_j/‖w_j‖."""
    data, blocks = linear_data(seed=5)
    prob = kernel_problem(data, blocks, KernelSpec(kind=KernelKind.LINEAR))
    kappa = 0.05
    values = estimate_condition(prob, SparsityPattern.of([0, 2]), kappa)

    xc = data.x - data.x.mean(axis=0)
    cols = blocks.indices([0, 2])
    xj = xc[:, cols]
    gram = xj.T @ xj + prob.n * kappa * np.eye(4)
    w = np.linalg.solve(gram, xj.T @ prob.y_centered)
    h = np.concatenate([1.0 * w[:2] / np.linalg.norm(w[:2]), 0.8 * w[2:] / np.linalg.norm(w[2:])])
    expected = np.linalg.norm(xc[:, blocks.span(1)].T @ xj @ np.linalg.solve(gram, h))

    assert set(values) == {1}
    assert values[1] == pytest.approx(float(expected), rel=1e-8)


def test_estimate_condition_orthogonal_group_is_zero() -> None:
    """A centered column orthogonal to the active ones gives 0."""
    rng = np.random.default_rng(6)
    raw = rng.standard_normal((30, 3))
    q, _ = np.linalg.qr(raw - raw.mean(axis=0))
    y = q[:, 0] + 0.5 * q[:, 1] + 0.2 * rng.standard_normal(30)
    prob = kernel_problem(Dataset(x=q, y=y), BlockStructure.uniform(3, 1), KernelSpec(kind=KernelKind.LINEAR))
    values = estimate_condition(prob, SparsityPattern.of([0, 1]), 0.01)

    assert values[2] == pytest.approx(0.0, abs=1e-10)


def test_estimate_condition_bad_arguments() -> None:
    """Empty patterns are undefined; κ must be positive."""
    data, blocks = linear_data(n=20)
    prob = kernel_problem(data, blocks, KernelSpec(kind=KernelKind.LINEAR))
    with pytest.raises(ConditionUndefinedError):
        estimate_condition(prob, SparsityPattern.of([]), 0.1)
    with pytest.raises(ValueError):
        estimate_condition(prob, SparsityPattern.of([0]), 0.0)


@pytest.mark.slow
def test_gaussian_mkl_zeroes_inactive_kernels() -> None:
    """Inactive kernels get exactly zero weight at the default tolerance, as in a tight solve."""
    npm = gen_nonparametric_model(42)
    data = sample_nonparametric(npm, 300, stream(42, 0))
    blocks = BlockStructure.uniform(npm.m, 1)
    prob = kernel_problem(data, blocks, KernelSpec(kind=KernelKind.GAUSSIAN, bandwidth=1.0))
    rel_tol = DEFAULT_NUMERICS.pattern_rel_tol

    patterns = []
    for mu in (0.1, 0.03, 0.01):
        sol = mkl_solve(prob, mu)
        pattern = relative_pattern(sol.norms, blocks, rel_tol)
        assert pattern == SparsityPattern.of(int(j) for j in np.flatnonzero(sol.eta))
        assert all(sol.norms[j] == 0.0 for j in range(npm.m) if j not in pattern.active)
        assert pattern == relative_pattern(mkl_solve(prob, mu, numerics=TIGHT).norms, blocks, rel_tol)
        assert sol.duality_gap <= DEFAULT_NUMERICS.mkl_gap_tol * (1.0 + abs(sol.primal))
        patterns.append(pattern)
    assert npm.pattern in patterns


def test_adaptive_kernel_weights_unit_minimum_and_zero_norm() -> None:
    """Weights are ‖f̂_j‖^(−γ) over their minimum; a kernel with no signal is undefined."""
    data, blocks = linear_data(seed=7)
    prob = kernel_problem(data, blocks, KernelSpec(kind=KernelKind.LINEAR))
    norms = ls_kernel_estimate(prob, 0.1).norms
    weights = adaptive_kernel_weights(prob, 2.0, 0.1)

    np.testing.assert_allclose(weights, norms**-2.0 / np.min(norms**-2.0), rtol=1e-10)
    assert weights.min() == pytest.approx(1.0)

    x = np.column_stack([data.x[:, :4], np.ones((data.n, 2))])
    flat = kernel_problem(Dataset(x=x, y=data.y), blocks, KernelSpec(kind=KernelKind.LINEAR))
    with pytest.raises(ConditionUndefinedError, match=r"\[2\]"):
        adaptive_kernel_weights(flat, 1.0, 0.1)


def test_adaptive_path_has_window_the_plain_path_lacks() -> None:
    """On a violated linear instance only the reweighted path selects J."""
    model = violated_model()
    blocks = BlockStructure.uniform(3, 1)
    pattern = SparsityPattern.of([0, 1])
    prob = kernel_problem(exact_moment_data(model, 60), blocks, KernelSpec(kind=KernelKind.LINEAR))
    rel_tol = DEFAULT_NUMERICS.pattern_rel_tol

    plain = [relative_pattern(mkl_solve(prob, mu).norms, blocks, rel_tol) for mu in (0.01, 0.03, 0.1, 0.3)]
    adaptive = [
        relative_pattern(adaptive_mkl(prob, mu0, 2.0).norms, blocks, rel_tol) for mu0 in (0.03, 0.1, 0.3, 1.0)
    ]

    assert pattern not in plain
    assert pattern in adaptive


def test_adaptive_weight_spread_shrinks_with_kappa() -> None:
    """Heavier ridge shrinkage flattens the adaptive weights."""
    data = exact_moment_data(violated_model(), 60)
    prob = kernel_problem(data, BlockStructure.uniform(3, 1), KernelSpec(kind=KernelKind.LINEAR))
    spreads = [float(np.max(adaptive_kernel_weights(prob, 2.0, kappa))) for kappa in (0.01, 0.1, 1.0)]

    assert spreads[0] > spreads[1] > spreads[2]
    assert spreads[0] > 100.0
    assert spreads[2] < 1.5


@pytest.mark.slow
def test_ls_norms_of_inactive_group_shrink_with_n() -> None:
    """With κ_n = n^(−1/3) the median least-squares norm of the zero group decreases in n."""
    model = violated_model()
    blocks = BlockStructure.uniform(3, 1)
    spec = KernelSpec(kind=KernelKind.LINEAR)
    medians = []
    for n in (64, 512, 2048):
        norms = []
        for r in range(20):
            prob = kernel_problem(sample_dataset(model, n, stream(9, n, r)), blocks, spec)
            norms.append(ls_kernel_estimate(prob, kappa_schedule(n, 1.0)).norms[2])
        medians.append(float(np.median(norms)))

    assert medians[0] > medians[1] > medians[2]


@pytest.mark.slow
def test_linear_estimate_condition_tracks_population_value() -> None:
    """Linear kernels at n = 2000 estimate the population condition value within 15%."""
    model = violated_model()
    blocks = BlockStructure.uniform(3, 1)
    pattern = SparsityPattern.of([0, 1])
    prob = kernel_problem(sample_dataset(model, 2_000, stream(3, 0)), blocks, KernelSpec(kind=KernelKind.LINEAR))

    estimate = estimate_condition(prob, pattern, kappa_schedule(prob.n, 1.0))[2]
    population = condition_value(model, blocks, pattern).per_group_values[2]
    assert population == pytest.approx(1.2)
    assert estimate == pytest.approx(population, rel=0.15)


@pytest.mark.slow
def test_estimate_condition_agrees_with_closed_form_verdict() -> None:
    """Gaussian kernels at n = 2000 land on the same side of 1 as the closed form, away from the boundary."""
    spec = KernelSpec(kind=KernelKind.GAUSSIAN, bandwidth=1.0)
    compared = 0
    for seed in range(40, 46):
        npm = gen_nonparametric_model(seed, truncation=20)
        report = nonparametric_condition(npm)
        data = sample_nonparametric(npm, 2_000, stream(seed, 1))
        prob = kernel_problem(data, BlockStructure.uniform(npm.m, 1), spec)
        estimates = estimate_condition(prob, npm.pattern, kappa_schedule(prob.n, 1.0))
        for i, value in report.per_group_values.items():
            if value < 0.5:
                assert estimates[i] < 1.0
                compared += 1
            elif value > 3.0:
                assert estimates[i] > 1.0
                compared += 1
    assert compared > 0
