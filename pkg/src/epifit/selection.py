"""Model comparison: information criteria, bridge-sampling evidence, Bayes
factors, and the endemic-transition covariance diagnostic."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, ParameterError
from .sampling import ChainDraws, simulated_annealing, geometric_schedule
from .diagnostics import ess


@dataclass
class ModelScore:
    """Comparison scores of one fitted model variant."""

    aic: float
    bic: float
    dic: float
    dic2: float
    waic: float
    k: int
    max_loglik: float
    p_dic: float
    p_dic2: float
    p_waic: float
    lppd: float
    log_ml: float = float("nan")
    log_ml_mc_error: float = float("nan")
    name: str = ""
    wall_time_days: float = float("nan")

    def __post_init__(self):
        if self.p_dic2 < 0 or self.p_waic < 0:
            raise ParameterError("effective parameter counts cannot be negative")


def _pool_loglik(chains):
    if isinstance(chains, ChainDraws):
        chains = [chains]
    mats = []
    for c in chains:
        if c.loglik is None:
            raise EstimationError(
                "information criteria need the per-observation log-likelihood "
                "matrix; this fit did not record one")
        mats.append(c.loglik)
    return np.concatenate(mats, axis=0)


def _pool_unconstrained(chains):
    if isinstance(chains, ChainDraws):
        chains = [chains]
    return np.concatenate([c.unconstrained for c in chains], axis=0)


def information_criteria(chains, k, loglik_fn, refine_sa=False,
                         sa_steps=2000, seed=0) -> ModelScore:
    """AIC, BIC, DIC, DIC2 and WAIC from posterior draws.

    `loglik_fn` maps an unconstrained parameter point to the per-observation
    log-likelihood vector; it supplies the DIC plug-in deviance at the
    posterior mean (taken in unconstrained space). The maximum likelihood for
    AIC/BIC is the best posterior draw, optionally refined by a short
    simulated-annealing run started there.
    """
    if k <= 0:
        raise ParameterError("parameter count must be positive")
    loglik = _pool_loglik(chains)
    draws = _pool_unconstrained(chains)
    m, n = loglik.shape
    if m < 2:
        raise ParameterError("need at least two draws")

    totals = loglik.sum(axis=1)
    best = int(np.argmax(totals))
    max_loglik = float(totals[best])
    if refine_sa:
        target = lambda x: float(np.sum(loglik_fn(x)))
        res = simulated_annealing(target, draws[best],
                                  geometric_schedule(1.0, 1e-6, sa_steps),
                                  seed=seed)
        max_loglik = max(max_loglik, res.value)

    aic = 2.0 * k - 2.0 * max_loglik
    bic = k * math.log(n) - 2.0 * max_loglik

    deviance = -2.0 * totals
    mean_dev = float(deviance.mean())
    dev_at_mean = -2.0 * float(np.sum(loglik_fn(draws.mean(axis=0))))
    p_dic = mean_dev - dev_at_mean
    dic = dev_at_mean + 2.0 * p_dic
    p_dic2 = float(deviance.var(ddof=1)) / 2.0
    dic2 = dev_at_mean + 2.0 * p_dic2

    col_max = loglik.max(axis=0)
    lppd = float(np.sum(col_max + np.log(np.mean(np.exp(loglik - col_max),
                                                 axis=0))))
    p_waic = float(np.sum(loglik.var(axis=0, ddof=1)))
    waic = -2.0 * (lppd - p_waic)

    return ModelScore(aic=aic, bic=bic, dic=dic, dic2=dic2, waic=waic, k=k,
                      max_loglik=max_loglik, p_dic=p_dic, p_dic2=p_dic2,
                      p_waic=p_waic, lppd=lppd)


def _mvn_logpdf(x, mean, chol):
    diff = np.atleast_2d(x - mean)
    z = np.linalg.solve(chol, diff.T).T
    quad = np.sum(z * z, axis=-1)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    dim = mean.size
    return -0.5 * (dim * math.log(2.0 * math.pi) + logdet + quad)


def bridge_log_ml(draws, logpost, seed=0, max_iter=1000, rel_tol=1e-10,
                  min_draws=1000):
    """Log marginal likelihood by iterative optimal bridge sampling.

    The first half of the pooled draws moment-matches a Gaussian proposal
    in unconstrained space; the second half drives the iteration against an
    equal number of proposal samples. Returns (log_ml, mc_error) where the
    error combines the proposal-side variance with a spectral correction for
    autocorrelation on the posterior side.
    """
    pooled = _pool_unconstrained(draws) if not isinstance(draws, np.ndarray) \
        else np.asarray(draws, dtype=float)
    if pooled.ndim == 1:
        pooled = pooled[:, None]
    m = pooled.shape[0]
    if m < min_draws:
        raise EstimationError(f"bridge sampling needs >= {min_draws} draws, got {m}")

    half = m // 2
    fit_part, iter_part = pooled[:half], pooled[half:]
    n1 = iter_part.shape[0]
    n2 = n1

    mean = fit_part.mean(axis=0)
    cov = np.atleast_2d(np.cov(fit_part, rowvar=False))
    cov += 1e-10 * np.eye(cov.shape[0])
    chol = np.linalg.cholesky(cov)

    rng = np.random.default_rng(seed)
    proposal = mean + rng.standard_normal((n2, mean.size)) @ chol.T

    q11 = np.asarray([logpost(row) for row in iter_part])
    q12 = _mvn_logpdf(iter_part, mean, chol)
    q21 = np.asarray([logpost(row) for row in proposal])
    q22 = _mvn_logpdf(proposal, mean, chol)

    l1 = q11 - q12
    l2 = q21 - q22
    lstar = float(np.median(l1))
    if not math.isfinite(lstar):
        raise EstimationError(
            "bridge iteration degenerated: proposal and posterior do not overlap")
    with np.errstate(invalid="ignore", over="ignore"):
        u1 = np.exp(l1 - lstar)
        u2 = np.exp(l2 - lstar)

    neff = _median_ess(iter_part)
    s1 = neff / (neff + n2)
    s2 = n2 / (neff + n2)

    r = 1.0
    for _ in range(max_iter):
        num = u2 / (s1 * u2 + s2 * r)
        den = 1.0 / (s1 * u1 + s2 * r)
        num_sum = num.sum()
        den_sum = den.sum()
        if not (np.isfinite(num_sum) and np.isfinite(den_sum)) \
                or num_sum == 0 or den_sum == 0:
            raise EstimationError(
                "bridge iteration degenerated: proposal and posterior do not overlap")
        r_new = (num_sum / n2) / (den_sum / n1)
        if abs(r_new - r) / r_new < rel_tol:
            r = r_new
            break
        r = r_new

    log_ml = math.log(r) + lstar

    f_prop = u2 / (s1 * u2 + s2 * r)          # proposal-side integrand
    f_post = 1.0 / (s1 * u1 + s2 * r)          # posterior-side integrand
    tau = n1 / max(_series_ess(f_post), 1.0)
    re2 = (f_prop.var(ddof=1) / (n2 * f_prop.mean() ** 2)
           + tau * f_post.var(ddof=1) / (n1 * f_post.mean() ** 2))
    return log_ml, math.sqrt(re2)


def _median_ess(matrix):
    vals = []
    for j in range(matrix.shape[1]):
        col = matrix[:, j][None, :]
        v = ess(col)
        if math.isfinite(v):
            vals.append(v)
    return float(np.median(vals)) if vals else float(matrix.shape[0])


def _series_ess(series):
    v = ess(series[None, :])
    return v if math.isfinite(v) else float(series.size)


def bayes_factor(score_a: ModelScore, score_b: ModelScore):
    """Log Bayes factor of a over b with the combined MC error."""
    if not (math.isfinite(score_a.log_ml) and math.isfinite(score_b.log_ml)):
        raise ParameterError("both models need a finite log marginal likelihood")
    log_bf = score_a.log_ml - score_b.log_ml
    err = math.hypot(score_a.log_ml_mc_error, score_b.log_ml_mc_error)
    return log_bf, err


# -------------------------------------------------------------- endemicity

@dataclass
class EndemicityResult:
    """Daily covariance/correlation between the infection rate and tau*S/N."""

    covariance: np.ndarray
    correlation: np.ndarray
    undefined: np.ndarray          # days where a factor has zero variance
    first_negative_day: int | None # first day the 50% interval is all negative
    interval_low: np.ndarray
    interval_high: np.ndarray


_Z_75 = 0.6744897501960817  # 75th normal percentile: half-width of a 50% CI


def endemicity_diagnostic(rate_draws, susceptible_draws, tau, population
                          ) -> EndemicityResult:
    """Track when transmission decouples from the susceptible pool.

    Inputs are posterior draws laid out (draws, days). For each day we compute
    the sample covariance and Pearson correlation across draws between the
    infection rate and the scaling factor tau * S / N; the reported day is the
    first whose 50% normal-theory interval for the covariance lies entirely
    below zero.
    """
    lam = np.asarray(rate_draws, dtype=float)
    sus = np.asarray(susceptible_draws, dtype=float)
    if lam.shape != sus.shape or lam.ndim != 2:
        raise ParameterError("rate and susceptible draws must share (draws, days)")
    m, n = lam.shape
    if m < 2:
        raise ParameterError("need at least two draws per day")

    factor = tau * sus / population
    lam_c = lam - lam.mean(axis=0)
    fac_c = factor - factor.mean(axis=0)
    prods = lam_c * fac_c
    cov = prods.sum(axis=0) / (m - 1)
    se = prods.std(axis=0, ddof=1) / math.sqrt(m)
    lo = cov - _Z_75 * se
    hi = cov + _Z_75 * se

    var_l = lam_c.var(axis=0, ddof=1)
    var_f = fac_c.var(axis=0, ddof=1)
    undefined = (var_l == 0) | (var_f == 0)
    corr = np.full(n, np.nan)
    ok = ~undefined
    corr[ok] = cov[ok] / np.sqrt(var_l[ok] * var_f[ok])

    negative = np.flatnonzero(hi < 0)
    first_day = int(negative[0]) + 1 if negative.size else None
    return EndemicityResult(covariance=cov, correlation=corr,
                            undefined=undefined, first_negative_day=first_day,
                            interval_low=lo, interval_high=hi)
