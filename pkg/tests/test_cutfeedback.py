import numpy as np
import pytest

from epifit.cutfeedback import loess_smooth, observed_proportion
from epifit.errors import ParameterError

from .oracles import loess_reference


def test_constant_input_returns_constant():
    x = np.arange(1.0, 41.0)
    y = np.ones(40)
    np.testing.assert_allclose(loess_smooth(x, y), 1.0, atol=1e-12)


def test_linear_input_reproduced_exactly():
    x = np.arange(1.0, 61.0)
    y = 3.0 + 2.0 * x
    got = loess_smooth(x, y, span=0.3)
    np.testing.assert_allclose(got, y, rtol=1e-12, atol=1e-9)


def test_matches_direct_wls_oracle():
    rng = np.random.default_rng(8)
    x = np.arange(1.0, 101.0)
    y = np.sin(x / 9.0) + 0.2 * rng.standard_normal(100)
    for span in (0.2, 0.3, 0.5):
        got = loess_smooth(x, y, span=span)
        ref = loess_reference(x, y, span)
        np.testing.assert_allclose(got, ref, atol=1e-8)


def test_loess_validation():
    with pytest.raises(ParameterError):
        loess_smooth(np.arange(3.0), np.arange(4.0))
    with pytest.raises(ParameterError):
        loess_smooth(np.arange(5.0), np.arange(5.0), span=0.0)
    with pytest.raises(ParameterError):
        loess_smooth(np.arange(3.0), np.array([np.nan, np.nan, 1.0]))


def test_proportion_of_exact_ratio_is_one():
    n, m = 50, 30
    latent = np.linspace(40.0, 400.0, n)
    cases = latent.copy()
    draws = np.tile(latent, (m, 1))
    res = observed_proportion(cases, draws)
    np.testing.assert_allclose(res.draws, 1.0)
    np.testing.assert_allclose(res.median, 1.0)
    np.testing.assert_allclose(res.smoothed, 1.0, atol=1e-12)
    assert np.all(res.excluded == 0)


def test_zero_draws_excluded_and_counted():
    cases = np.array([5.0, 5.0, 5.0])
    draws = np.array([[10.0, 0.0, 20.0],
                      [10.0, 0.0, 0.0],
                      [10.0, 10.0, 20.0]])
    res = observed_proportion(cases, draws)
    np.testing.assert_array_equal(res.excluded, [0, 2, 1])
    assert np.isnan(res.draws[0, 1]) and np.isnan(res.draws[1, 2])
    assert res.median[1] == pytest.approx(0.5)


def test_smoother_tracks_median_curve():
    rng = np.random.default_rng(21)
    n, m = 80, 200
    days = np.arange(1.0, n + 1.0)
    truth = 0.25 + 0.5 / (1.0 + np.exp(-(days - 40.0) / 8.0))
    latent = 1000.0 * np.ones(n)
    draws = latent * (1.0 + 0.05 * rng.standard_normal((m, n)))
    cases = truth * latent
    res = observed_proportion(cases, draws)
    ref = loess_reference(days, res.median, 0.3)
    np.testing.assert_allclose(res.smoothed, ref, atol=1e-8)
    assert np.max(np.abs(res.smoothed - truth)) < 0.05


def test_proportion_validation():
    with pytest.raises(ParameterError):
        observed_proportion(np.ones(5), np.ones((3, 4)))
    with pytest.raises(ParameterError):
        observed_proportion(-np.ones(4), np.ones((3, 4)))
