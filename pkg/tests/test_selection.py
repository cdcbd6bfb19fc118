import math

import numpy as np
import pytest
from scipy import stats

from epifit.errors import EstimationError, ParameterError
from epifit.sampling import ChainDraws
from epifit.selection import (
    ModelScore,
    bayes_factor,
    bridge_log_ml,
    endemicity_diagnostic,
    information_criteria,
)


def _chain(loglik, draws=None):
    m = loglik.shape[0]
    if draws is None:
        draws = np.zeros((m, 1))
    return ChainDraws(unconstrained=draws, constrained=draws.copy(),
                      lp=loglik.sum(axis=1), loglik=loglik)


# --------------------------------------------------------------- criteria

def test_direct_formula_values():
    # constant -0.5 per observation over 100 days; total -50 per draw
    loglik = np.full((40, 100), -0.5)
    score = information_criteria(_chain(loglik), k=1,
                                 loglik_fn=lambda x: np.full(100, -0.5))
    assert score.aic == pytest.approx(2.0 + 100.0)
    assert score.bic == pytest.approx(math.log(100) + 100.0)
    assert score.max_loglik == pytest.approx(-50.0)
    # constant deviance: both effective-parameter terms vanish
    assert score.p_dic2 == 0.0
    assert score.dic2 == pytest.approx(100.0)
    assert score.dic == pytest.approx(100.0)
    assert score.p_waic == 0.0


def test_waic_against_brute_force_conjugate():
    # y_i ~ N(mu, 1), mu ~ N(0, 1): posterior is Gaussian and exact draws are free
    rng = np.random.default_rng(17)
    n = 25
    y = rng.normal(0.7, 1.0, n)
    post_var = 1.0 / (1.0 + n)
    post_mean = y.sum() * post_var

    def loglik_matrix(n_draws, seed):
        mu = np.random.default_rng(seed).normal(post_mean, math.sqrt(post_var),
                                                n_draws)
        return stats.norm.logpdf(y[None, :], mu[:, None], 1.0)

    score = information_criteria(
        _chain(loglik_matrix(100_000, 1)), k=1,
        loglik_fn=lambda x: stats.norm.logpdf(y, post_mean, 1.0))
    big = loglik_matrix(1_000_000, 2)
    lppd_bf = float(np.sum(np.log(np.mean(np.exp(big), axis=0))))
    p_waic_bf = float(np.sum(big.var(axis=0, ddof=1)))
    waic_bf = -2.0 * (lppd_bf - p_waic_bf)
    assert score.waic == pytest.approx(waic_bf, abs=0.1)
    assert score.p_waic >= 0.0


def test_criteria_invariant_to_draw_permutation():
    rng = np.random.default_rng(3)
    loglik = rng.normal(-2.0, 0.3, size=(500, 30))
    draws = rng.standard_normal((500, 2))
    fn = lambda x: np.full(30, -2.0)
    a = information_criteria(_chain(loglik, draws), k=2, loglik_fn=fn)
    perm = rng.permutation(500)
    b = information_criteria(_chain(loglik[perm], draws[perm]), k=2, loglik_fn=fn)
    for field in ("aic", "bic", "dic", "dic2", "waic", "max_loglik"):
        assert getattr(a, field) == pytest.approx(getattr(b, field), abs=1e-9)


def test_sa_refinement_can_only_improve():
    rng = np.random.default_rng(5)
    draws = rng.normal(0.5, 1.0, size=(400, 1))
    y = np.array([0.0, 0.1])
    fn = lambda x: stats.norm.logpdf(y, x[0], 1.0)
    loglik = np.stack([fn(row) for row in draws])
    plain = information_criteria(_chain(loglik, draws), k=1, loglik_fn=fn)
    refined = information_criteria(_chain(loglik, draws), k=1, loglik_fn=fn,
                                   refine_sa=True, seed=2)
    assert refined.max_loglik >= plain.max_loglik
    best = float(np.sum(fn(np.array([0.05]))))
    assert refined.max_loglik <= best + 1e-9
    assert refined.max_loglik == pytest.approx(best, abs=1e-3)


def test_missing_loglik_matrix_is_contract_error():
    c = ChainDraws(unconstrained=np.zeros((10, 1)), constrained=np.zeros((10, 1)),
                   lp=np.zeros(10), loglik=None)
    with pytest.raises(EstimationError):
        information_criteria(c, k=1, loglik_fn=lambda x: np.zeros(3))
    with pytest.raises(ParameterError):
        information_criteria(_chain(np.zeros((5, 3))), k=0,
                             loglik_fn=lambda x: np.zeros(3))
    with pytest.raises(ParameterError):
        ModelScore(aic=1, bic=1, dic=1, dic2=1, waic=1, k=1, max_loglik=0,
                   p_dic=0, p_dic2=-0.5, p_waic=0, lppd=0)


# ----------------------------------------------------------- bridge sampling

def _normal_normal_model(seed=0, n=30, sigma=1.3, tau0=2.0, mu0=0.4):
    rng = np.random.default_rng(seed)
    y = rng.normal(1.0, sigma, n)
    post_var = 1.0 / (1.0 / tau0 ** 2 + n / sigma ** 2)
    post_mean = post_var * (mu0 / tau0 ** 2 + y.sum() / sigma ** 2)

    def logpost(x):
        mu = x[0]
        return float(stats.norm.logpdf(y, mu, sigma).sum()
                     + stats.norm.logpdf(mu, mu0, tau0))

    cov = sigma ** 2 * np.eye(n) + tau0 ** 2 * np.ones((n, n))
    log_evidence = float(stats.multivariate_normal.logpdf(y, np.full(n, mu0), cov))
    return logpost, post_mean, math.sqrt(post_var), log_evidence


def test_bridge_recovers_conjugate_evidence():
    logpost, pm, ps, truth = _normal_normal_model()
    draws = np.random.default_rng(1).normal(pm, ps, (4000, 1))
    log_ml, err = bridge_log_ml(draws, logpost, seed=2)
    assert abs(log_ml - truth) < 0.05
    assert abs(log_ml - truth) < 3 * err + 0.02


def test_bridge_identity_when_target_is_gaussian():
    # unnormalized Gaussian with a known constant: log c recovered
    log_c = 2.75
    logpost = lambda x: float(stats.norm.logpdf(x[0], 1.0, 2.0)) + log_c
    draws = np.random.default_rng(3).normal(1.0, 2.0, (3000, 1))
    log_ml, err = bridge_log_ml(draws, logpost, seed=4)
    assert abs(log_ml - log_c) < 3 * err
    assert err < 0.05


def test_self_bayes_factor_is_zero():
    logpost, pm, ps, _ = _normal_normal_model(seed=5)
    rng = np.random.default_rng(6)
    score = []
    for seed in (7, 8):
        draws = rng.normal(pm, ps, (3000, 1))
        log_ml, err = bridge_log_ml(draws, logpost, seed=seed)
        score.append(ModelScore(aic=0, bic=0, dic=0, dic2=0, waic=0, k=1,
                                max_loglik=0, p_dic=0, p_dic2=0, p_waic=0,
                                lppd=0, log_ml=log_ml, log_ml_mc_error=err))
    log_bf, err = bayes_factor(score[0], score[1])
    assert abs(log_bf) < 2 * err
    a, _ = bayes_factor(score[0], score[1])
    b, _ = bayes_factor(score[1], score[0])
    assert a == pytest.approx(-b)


def test_bridge_stable_under_doubling_proposal_sample():
    logpost, pm, ps, truth = _normal_normal_model(seed=9)
    rng = np.random.default_rng(10)
    small = rng.normal(pm, ps, (2000, 1))
    large = rng.normal(pm, ps, (4000, 1))
    ml_a, err_a = bridge_log_ml(small, logpost, seed=11)
    ml_b, err_b = bridge_log_ml(large, logpost, seed=12)
    assert abs(ml_a - ml_b) < 3 * math.hypot(err_a, err_b)


def test_nested_models_prefer_the_smaller():
    # adding a useless coefficient with a unit prior costs evidence
    rng = np.random.default_rng(13)
    n = 40
    x_cov = rng.standard_normal(n)
    y = rng.normal(0.8, 1.0, n)

    def evidence_and_draws(design):
        # conjugate linear-Gaussian: y ~ N(design @ beta, I), beta ~ N(0, I)
        k = design.shape[1]
        prec = np.eye(k) + design.T @ design
        cov = np.linalg.inv(prec)
        mean = cov @ design.T @ y
        marg_cov = np.eye(n) + design @ design.T
        log_ev = float(stats.multivariate_normal.logpdf(y, np.zeros(n), marg_cov))
        draws = rng.multivariate_normal(mean, cov, 3000)

        def logpost(b):
            return float(stats.norm.logpdf(y, design @ b, 1.0).sum()
                         + stats.norm.logpdf(b, 0.0, 1.0).sum())

        return log_ev, draws, logpost

    d_small = np.ones((n, 1))
    d_large = np.column_stack([np.ones(n), x_cov])
    ev_s, dr_s, lp_s = evidence_and_draws(d_small)
    ev_l, dr_l, lp_l = evidence_and_draws(d_large)
    assert ev_s > ev_l  # analytic sanity
    ml_s, err_s = bridge_log_ml(dr_s, lp_s, seed=14)
    ml_l, err_l = bridge_log_ml(dr_l, lp_l, seed=15)
    assert ml_s - ml_l >= -2 * math.hypot(err_s, err_l)


def test_bridge_failure_modes():
    draws = np.random.default_rng(0).normal(0, 1, (500, 1))
    with pytest.raises(EstimationError, match="1000"):
        bridge_log_ml(draws, lambda x: 0.0)
    draws = np.random.default_rng(0).normal(0, 1, (2000, 1))
    with pytest.raises(EstimationError, match="overlap"):
        bridge_log_ml(draws, lambda x: -np.inf, min_draws=100)


# ----------------------------------------------------------------- endemicity

def test_degenerate_factor_gives_zero_covariance():
    rng = np.random.default_rng(1)
    lam = rng.normal(0.5, 0.1, (50, 10))
    sus = np.full((50, 10), 8e5)
    res = endemicity_diagnostic(lam, sus, tau=6, population=1e6)
    np.testing.assert_allclose(res.covariance, 0.0, atol=1e-15)
    assert np.all(res.undefined)
    assert np.all(np.isnan(res.correlation))


def test_exact_linear_relation_gives_unit_correlation():
    rng = np.random.default_rng(2)
    sus = rng.uniform(4e5, 9e5, (80, 12))
    factor = 6 * sus / 1e6
    lam = 2.5 * factor
    res = endemicity_diagnostic(lam, sus, tau=6, population=1e6)
    np.testing.assert_allclose(res.correlation, 1.0, atol=1e-12)
    assert res.first_negative_day is None


def test_constructed_sign_change_detected_at_day_50():
    rng = np.random.default_rng(3)
    m, n = 400, 80
    z = rng.standard_normal(m)
    sus = 5e5 + 1e5 * z[:, None] * np.ones((1, n))
    factor_centered = 6 * 1e5 / 1e6  # scale of the factor's spread
    signs = np.where(np.arange(1, n + 1) >= 50, -1.0, 1.0)
    lam = 0.5 + signs[None, :] * z[:, None] * 0.2 \
        + 0.001 * rng.standard_normal((m, n))
    res = endemicity_diagnostic(lam, sus, tau=6, population=1e6)
    assert res.first_negative_day == 50
    assert np.all(res.covariance[:49] > 0)
    assert np.all(res.covariance[49:] < 0)


def test_endemicity_validation():
    with pytest.raises(ParameterError):
        endemicity_diagnostic(np.ones((1, 5)), np.ones((1, 5)), 6, 1e6)
    with pytest.raises(ParameterError):
        endemicity_diagnostic(np.ones((3, 5)), np.ones((3, 4)), 6, 1e6)
