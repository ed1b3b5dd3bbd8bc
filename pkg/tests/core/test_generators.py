"""Tests for the random finite and nonparametric model generators."""

import numpy as np
import pytest

from src.core.consistency import Verdict, population_pattern_window, refined_condition
from src.core.errors import AttemptsExhaustedError
from src.core.gaussian import eigenfunction_means
from src.core.generators import (
    TargetVerdict,
    additive_function,
    gen_finite_model,
    gen_finite_model_conditioned,
    gen_nonparametric_model,
    nonparametric_condition,
    sample_nonparametric,
)

__all__ = []


def test_finite_model_shape_and_scaling() -> None:
    """Diagonal blocks have unit trace and active loadings lie in [1/3, 1]."""
    fm = gen_finite_model(11, m=5, group_size=3, card_j=2)
    sigma = fm.model.sigma_xx

    assert fm.blocks.m == 5
    assert len(fm.pattern.active) == 2
    for j in range(5):
        span = fm.blocks.span(j)
        assert np.trace(sigma[span, span]) == pytest.approx(1.0)
    norms = fm.blocks.norms(fm.model.w)
    for j in range(5):
        if j in fm.pattern.active:
            assert 1.0 / 3.0 - 1e-12 <= norms[j] <= 1.0 + 1e-12
        else:
            assert norms[j] == 0.0
    assert fm.model.sigma == pytest.approx(0.2 * np.sqrt(fm.model.w @ sigma @ fm.model.w))


def test_finite_model_is_reproducible() -> None:
    """The same seed gives the same model."""
    first = gen_finite_model(3)
    second = gen_finite_model(3)

    np.testing.assert_array_equal(first.model.sigma_xx, second.model.sigma_xx)
    np.testing.assert_array_equal(first.model.w, second.model.w)
    assert first.pattern == second.pattern


def test_finite_model_rejects_bad_cardinality() -> None:
    """card_j outside [1, m] is an argument error, not a redraw."""
    with pytest.raises(ValueError, match="card_j"):
        gen_finite_model(0, m=3, card_j=4)


def test_conditioned_strict_model() -> None:
    """A strict target returns a model whose condition is below one."""
    result = gen_finite_model_conditioned(5, TargetVerdict.STRICT, max_attempts=500)

    assert result.report.max_value < 1.0
    assert result.report.verdict is Verdict.STRICT_HOLDS
    assert 1 <= result.attempts <= 500

    again = gen_finite_model_conditioned(5, TargetVerdict.STRICT, max_attempts=500)
    assert again.attempts == result.attempts
    np.testing.assert_array_equal(again.finite.model.w, result.finite.model.w)


def test_conditioned_model_attempt_cap() -> None:
    """With no attempts allowed the generator gives up."""
    with pytest.raises(AttemptsExhaustedError):
        gen_finite_model_conditioned(5, TargetVerdict.STRICT, max_attempts=0)


@pytest.mark.slow
def test_conditioned_violated_models() -> None:
    """Both violated targets are reachable and carry the verdicts they were accepted for."""
    no_refine = gen_finite_model_conditioned(5, TargetVerdict.VIOLATED_NO_REFINE, margin=0.05, max_attempts=2_000)
    fm = no_refine.finite
    assert no_refine.report.verdict is Verdict.VIOLATED
    assert no_refine.report.max_value > 1.05
    assert population_pattern_window(fm.model, fm.blocks, fm.pattern) == []

    refined = gen_finite_model_conditioned(5, TargetVerdict.VIOLATED_REFINED, max_attempts=2_000)
    fm = refined.finite
    assert refined.report.verdict is Verdict.VIOLATED
    assert population_pattern_window(fm.model, fm.blocks, fm.pattern)
    values = refined_condition(fm.model, fm.blocks, fm.pattern, include_violating=True)
    assert any(v > 0.0 for v in values.values())


def test_nonparametric_model_structure() -> None:
    """Inactive functions vanish and active ones meet the range condition."""
    npm = gen_nonparametric_model(2, m=4, card_j=2, truncation=20)

    assert npm.m == 4
    assert len(npm.pattern.active) == 2
    np.testing.assert_allclose(np.diag(npm.op.s), 1.0)
    for j, coords in enumerate(npm.f_coords):
        if j not in npm.pattern.active:
            assert not np.any(coords)
            continue
        sys = npm.op.systems[j]
        size = coords.shape[0]
        q = eigenfunction_means(sys)[:size] / sys.eigenvalues[:size]
        assert float(q @ coords) == pytest.approx(0.0, abs=1e-9)
    assert npm.sigma > 0.0


def test_nonparametric_condition_covers_inactive_groups() -> None:
    """The closed-form report has one entry per inactive group."""
    npm = gen_nonparametric_model(2, truncation=20)
    report = nonparametric_condition(npm)

    inactive = {j for j in range(npm.m) if j not in npm.pattern.active}
    assert set(report.per_group_values) == inactive
    assert all(v >= 0.0 for v in report.per_group_values.values())


def test_sample_nonparametric_is_additive_plus_noise() -> None:
    """Sampled responses are the additive function plus small noise."""
    npm = gen_nonparametric_model(4, truncation=20)
    data = sample_nonparametric(npm, 2_000, np.random.default_rng(0))
    signal = additive_function(npm, data.x)

    assert data.x.shape == (2_000, npm.m)
    residual = data.y - signal
    assert float(residual.std()) == pytest.approx(npm.sigma, rel=0.1)
