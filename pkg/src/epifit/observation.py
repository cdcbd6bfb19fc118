"""Observation likelihoods, priors, IFR elicitation and the log posterior.

The posterior lives in unconstrained space: positive parameters are sampled
on the log scale and probabilities on the logit scale, with change-of-variable
Jacobians folded into the prior term. Everything is pure and reentrant, so
multiple chains can evaluate the same posterior object concurrently.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import expit, gammaln

from . import core
from ._kernels import forward_recursion, negbin_logpmf_series
from .errors import ElicitationError, EstimationError, ParameterError

LOG_2PI = math.log(2.0 * math.pi)


def _exp(v):
    # math.exp raises on overflow; the posterior wants inf -> -inf route instead
    try:
        return math.exp(v)
    except OverflowError:
        return math.inf

MIXTURE_VARIANTS = ("poisson_exp", "poisson_lognormal")

_GH_ORDER = 40
_gh_nodes, _gh_weights = np.polynomial.hermite.hermgauss(_GH_ORDER)
_gh_log_weights = np.log(_gh_weights) - 0.5 * math.log(math.pi)


def negbin_logpmf(d, theta, psi):
    """Negative Binomial log-pmf with mean theta and variance theta + theta^2/psi.

    Accepts scalars or arrays (broadcast together); returns the same shape.
    """
    d_arr, theta_arr = np.broadcast_arrays(np.asarray(d, dtype=float),
                                           np.asarray(theta, dtype=float))
    psi = float(psi)
    if not np.all(np.isfinite(d_arr)) or not np.all(np.isfinite(theta_arr)) \
            or not math.isfinite(psi):
        raise ParameterError("negbin inputs must be finite")
    if np.any(theta_arr <= 0) or psi <= 0:
        raise ParameterError("negbin needs theta > 0 and psi > 0")
    if np.any(d_arr < 0) or np.any(d_arr != np.floor(d_arr)):
        raise ParameterError("negbin counts must be non-negative integers")
    out = negbin_logpmf_series(np.ascontiguousarray(d_arr.ravel()),
                               np.ascontiguousarray(theta_arr.ravel()), psi)
    out = out.reshape(d_arr.shape)
    return float(out) if out.ndim == 0 else out


def poisson_logpmf(d, mu):
    d = np.asarray(d, dtype=float)
    mu = np.asarray(mu, dtype=float)
    out = d * np.log(mu) - mu - gammaln(d + 1.0)
    return float(out) if out.ndim == 0 else out


def mixture_loglik(d, mu, variant, sigma=None):
    """Log-likelihood of a Poisson scale mixture.

    `poisson_exp` mixes the rate with an Exponential of mean mu, which
    marginally is the Negative Binomial with dispersion 1 (computed through
    the same code path, so the identity is exact). `poisson_lognormal`
    moment-matches a LogNormal rate to mean mu and standard deviation sigma
    and integrates it out with fixed-order Gauss-Hermite quadrature.
    """
    if variant == "poisson_exp":
        return negbin_logpmf(d, mu, 1.0)
    if variant != "poisson_lognormal":
        raise ParameterError(f"unknown mixture variant {variant!r}")
    if sigma is None or sigma <= 0:
        raise ParameterError("poisson_lognormal needs sigma > 0")
    d_arr, mu_arr = np.broadcast_arrays(np.asarray(d, dtype=float),
                                        np.asarray(mu, dtype=float))
    if np.any(mu_arr <= 0):
        raise ParameterError("poisson_lognormal needs mu > 0")
    out = _poisson_lognormal_loglik(d_arr.ravel(), mu_arr.ravel(), float(sigma))
    out = out.reshape(d_arr.shape)
    return float(out) if out.ndim == 0 else out


def _poisson_lognormal_loglik(d, mu, sigma, strict=True):
    """Gauss-Hermite marginal of Poisson with a moment-matched LogNormal rate.

    With strict=True a non-finite result raises, naming the offending index;
    strict=False returns None instead, letting the posterior route such
    boundary points (mu underflowed relative to sigma) to -inf.
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        s2 = np.log1p(sigma ** 2 / mu ** 2)
        m = np.log(mu ** 2 / np.sqrt(mu ** 2 + sigma ** 2))
    if not (np.all(np.isfinite(s2)) and np.all(np.isfinite(m))):
        if strict:
            bad = int(np.flatnonzero(~(np.isfinite(s2) & np.isfinite(m)))[0])
            raise EstimationError(
                f"poisson_lognormal moment matching degenerate at index {bad} "
                f"(d={d[bad]}, mu={mu[bad]}, sigma={sigma})")
        return None
    # nodes of the latent log-rate, shape (n, order)
    z = m[:, None] + np.sqrt(2.0 * s2)[:, None] * _gh_nodes[None, :]
    d_col = d[:, None]
    with np.errstate(over="ignore"):
        log_pois = d_col * z - np.exp(z) - gammaln(d_col + 1.0)
    terms = _gh_log_weights[None, :] + log_pois
    top = terms.max(axis=1)
    out = top + np.log(np.sum(np.exp(terms - top[:, None]), axis=1))
    if not np.all(np.isfinite(out)):
        if strict:
            bad = int(np.flatnonzero(~np.isfinite(out))[0])
            raise EstimationError(
                f"poisson_lognormal quadrature non-finite at index {bad} "
                f"(d={d[bad]}, mu={mu[bad]}, sigma={sigma})")
        return None
    return out


@dataclass(frozen=True)
class AgeCaseMatrix:
    """Daily recorded cases split by age group, plus the per-group IFR."""

    counts: np.ndarray      # (n_days, n_groups)
    group_ifr: np.ndarray   # (n_groups,)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        p0 = np.asarray(self.group_ifr, dtype=float)
        if counts.ndim != 2 or counts.shape[1] != p0.size:
            raise ParameterError("counts must be (days, groups) matching group_ifr")
        if np.any(counts < 0):
            raise ParameterError("age-split case counts cannot be negative")
        if np.any((p0 < 0) | (p0 > 1)):
            raise ParameterError("group IFRs must lie in [0, 1]")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "group_ifr", p0)


def elicit_ifr(acm: AgeCaseMatrix, ifr_breaks):
    """Prior means for the piecewise-constant IFR from the age mix of cases.

    Each day's IFR is the case-weighted average of the per-group values; each
    segment's prior mean averages those days over [l_b, l_{b+1} - 1].
    """
    counts = acm.counts
    n = counts.shape[0]
    if ifr_breaks[0] != 1 or ifr_breaks[-1] > n + 1:
        raise ParameterError("ifr breaks must start at 1 and fit the case matrix")
    totals = counts.sum(axis=1)
    needed = np.arange(1, ifr_breaks[-1])  # days used by the segments
    zero_days = needed[totals[needed - 1] == 0]
    if zero_days.size:
        raise ElicitationError(
            f"day {int(zero_days[0])} has no recorded cases in any age group")
    daily = counts @ acm.group_ifr / totals
    means = []
    for lo, hi in zip(ifr_breaks[:-1], ifr_breaks[1:]):
        means.append(daily[lo - 1:hi - 1].mean())
    return np.asarray(means)


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters of the independent priors.

    Infection rates get LogNormal(rate_logmean, rate_logsd); dispersion and
    the seed cases get Gamma(shape, rate); each IFR gets a Gaussian around its
    elicited mean with a common sd (sd = 0 switches to the point-mass mode,
    where IFRs are fixed constants rather than sampled). The LogNormal
    mixture's scale prior is a pragmatic default; override it per analysis.
    """

    ifr_means: tuple
    ifr_sd: float = 1e-4
    rate_logmean: float = 0.0
    rate_logsd: float = 1.0
    dispersion_shape: float = 2.0
    dispersion_rate: float = 0.125
    init_cases_shape: float = 2.0
    init_cases_rate: float = 0.0625
    mix_scale_logmean: float = 0.0
    mix_scale_logsd: float = 1.0

    def __post_init__(self):
        means = tuple(float(m) for m in self.ifr_means)
        object.__setattr__(self, "ifr_means", means)
        if any(not 0.0 < m < 1.0 for m in means):
            raise ParameterError("IFR prior means must lie in (0, 1)")
        if self.ifr_sd < 0:
            raise ParameterError("IFR prior sd cannot be negative")
        for v in (self.rate_logsd, self.dispersion_shape, self.dispersion_rate,
                  self.init_cases_shape, self.init_cases_rate, self.mix_scale_logsd):
            if v <= 0:
                raise ParameterError("prior hyperparameters must be positive")

    @property
    def point_mass_ifr(self) -> bool:
        return self.ifr_sd == 0.0


class DeathCountPosterior:
    """Unconstrained-space log posterior of daily death counts.

    Deterministic: identical inputs give bit-identical outputs. Day 1 has no
    convolution history (the expected-death sum starts at day 2), so its
    log-likelihood entry is fixed at zero.
    """

    def __init__(self, deaths, config: core.ModelConfig, priors: PriorSpec,
                 doses=None):
        deaths = np.asarray(deaths, dtype=float)
        if deaths.size != config.n_days:
            raise ParameterError(
                f"{deaths.size} observations for a {config.n_days}-day model")
        if np.any(deaths < 0) or np.any(deaths != np.floor(deaths)):
            raise ParameterError("death counts must be non-negative integers")
        if len(priors.ifr_means) != config.n_ifr_segments:
            raise ParameterError(
                f"{len(priors.ifr_means)} IFR prior means for "
                f"{config.n_ifr_segments} segments")
        self.deaths = deaths
        self._deaths_tail = np.ascontiguousarray(deaths[1:])
        self.config = config
        self.priors = priors

        n = config.n_days
        if config.flags.vaccination:
            if doses is None:
                raise ParameterError("vaccination flag is on but no dose series given")
            self._vacc = core.vaccination_series(
                doses, config.immunity_prob_first, config.immunity_prob_second,
                n, config.h)
        else:
            self._vacc = np.zeros(n)
        self._death_pmf = config.death_delay_pmf().masses
        self._recovery_pmf = (config.recovery_delay_pmf().masses
                              if config.flags.seirs else np.zeros(1))
        self._births = (float(config.births_per_day)
                        if config.flags.demography else 0.0)
        self._seg_lengths = np.diff(config.changepoints)
        self._ifr_lengths = np.diff(config.ifr_breaks)

        # unconstrained layout: rates, [ifrs], [dispersion | mix scale], seed cases
        J, B = config.n_rate_segments, config.n_ifr_segments
        names = [f"rate_{j + 1}" for j in range(J)]
        self._ifr_slice = None
        if not priors.point_mass_ifr:
            self._ifr_slice = slice(J, J + B)
            names += [f"ifr_{b + 1}" for b in range(B)]
        self._dispersion_idx = None
        self._mix_scale_idx = None
        if config.likelihood == "negbin":
            self._dispersion_idx = len(names)
            names.append("dispersion")
        elif config.likelihood == "poisson_lognormal":
            self._mix_scale_idx = len(names)
            names.append("mix_scale")
        self._init_cases_idx = len(names)
        names.append("init_cases")
        self.param_names = tuple(names)
        self.n_params = len(names)

        p = priors
        self._rate_const = -J * (math.log(p.rate_logsd) + 0.5 * LOG_2PI)
        self._gamma_disp_const = (p.dispersion_shape * math.log(p.dispersion_rate)
                                  - gammaln(p.dispersion_shape))
        self._gamma_seed_const = (p.init_cases_shape * math.log(p.init_cases_rate)
                                  - gammaln(p.init_cases_shape))
        self._mix_const = -(math.log(p.mix_scale_logsd) + 0.5 * LOG_2PI)
        if not p.point_mass_ifr:
            self._ifr_const = -B * (math.log(p.ifr_sd) + 0.5 * LOG_2PI)
        self._fixed_ifr_day = None
        if p.point_mass_ifr:
            self._fixed_ifr_day = np.repeat(np.asarray(p.ifr_means),
                                            self._ifr_lengths)[:n]

    # ------------------------------------------------------------ transforms

    def constrain(self, x) -> core.ParamVector:
        x = np.asarray(x, dtype=float)
        J = self.config.n_rate_segments
        with np.errstate(over="ignore"):
            rates = np.exp(x[:J])
            if self._ifr_slice is not None:
                ifrs = expit(x[self._ifr_slice])
            else:
                ifrs = np.asarray(self.priors.ifr_means)
            dispersion = (_exp(x[self._dispersion_idx])
                          if self._dispersion_idx is not None else 1.0)
            mix_scale = (_exp(x[self._mix_scale_idx])
                         if self._mix_scale_idx is not None else 1.0)
            init_cases = _exp(x[self._init_cases_idx])
        return core.ParamVector(rates=rates, ifrs=ifrs, dispersion=dispersion,
                                init_cases=init_cases, mix_scale=mix_scale)

    def unconstrain(self, params: core.ParamVector) -> np.ndarray:
        params.validate()
        parts = [np.log(params.rates)]
        if self._ifr_slice is not None:
            p = np.asarray(params.ifrs)
            parts.append(np.log(p) - np.log1p(-p))
        if self._dispersion_idx is not None:
            parts.append([math.log(params.dispersion)])
        if self._mix_scale_idx is not None:
            parts.append([math.log(params.mix_scale)])
        parts.append([math.log(params.init_cases)])
        return np.concatenate(parts)

    def constrained_array(self, x) -> np.ndarray:
        """The constrained mirror of x, ordered like `param_names`."""
        pv = self.constrain(x)
        parts = [pv.rates]
        if self._ifr_slice is not None:
            parts.append(pv.ifrs)
        if self._dispersion_idx is not None:
            parts.append([pv.dispersion])
        if self._mix_scale_idx is not None:
            parts.append([pv.mix_scale])
        parts.append([pv.init_cases])
        return np.concatenate(parts)

    # ----------------------------------------------------------- components

    def log_prior(self, x) -> float:
        """Log prior density in unconstrained space, Jacobians included."""
        x = np.asarray(x, dtype=float)
        p = self.priors
        J = self.config.n_rate_segments
        # LogNormal on rates plus the log Jacobian collapses to a Normal in x
        z = (x[:J] - p.rate_logmean) / p.rate_logsd
        out = self._rate_const - 0.5 * float(z @ z)
        if self._ifr_slice is not None:
            xi = x[self._ifr_slice]
            prob = expit(xi)
            zi = (prob - np.asarray(p.ifr_means)) / p.ifr_sd
            jac = -np.logaddexp(0.0, xi) - np.logaddexp(0.0, -xi)
            out += self._ifr_const - 0.5 * float(zi @ zi) + float(jac.sum())
        with np.errstate(over="ignore"):
            if self._dispersion_idx is not None:
                xd = x[self._dispersion_idx]
                out += (self._gamma_disp_const + p.dispersion_shape * xd
                        - p.dispersion_rate * _exp(xd))
            if self._mix_scale_idx is not None:
                xm = x[self._mix_scale_idx]
                zm = (xm - p.mix_scale_logmean) / p.mix_scale_logsd
                out += self._mix_const - 0.5 * zm * zm
            xc = x[self._init_cases_idx]
            out += (self._gamma_seed_const + p.init_cases_shape * xc
                    - p.init_cases_rate * _exp(xc))
        return out

    def _forward(self, x):
        cfg = self.config
        n = cfg.n_days
        J = cfg.n_rate_segments
        with np.errstate(over="ignore"):
            rates = np.exp(x[:J])
            init_cases = _exp(x[self._init_cases_idx])
        if not np.all(np.isfinite(rates)) or not math.isfinite(init_cases):
            return None, None, None
        rate_day = np.repeat(rates, self._seg_lengths)
        if rate_day.size < n:
            rate_day = np.concatenate([rate_day, np.full(n - rate_day.size,
                                                         rates[-1])])
        if self._fixed_ifr_day is not None:
            ifr_day = self._fixed_ifr_day
        else:
            ifr_day = np.repeat(expit(x[self._ifr_slice]), self._ifr_lengths)[:n]
        C, S, I, R, valid = forward_recursion(
            n, float(cfg.population), cfg.tau, cfg.h, init_cases, rate_day,
            ifr_day, self._vacc, self._births, cfg.flags.demography,
            cfg.flags.seirs, int(cfg.waning_delay), self._recovery_pmf)
        if not valid:
            return None, None, None
        theta = np.empty(n)
        theta[0] = 0.0
        conv = np.convolve(C, self._death_pmf)
        theta[1:] = ifr_day[1:] * conv[:n - 1]
        return theta, (C, S, I, R, rate_day), ifr_day

    def per_obs_loglik(self, x) -> np.ndarray:
        """Per-day observation log-likelihood; all -inf for infeasible paths.

        Points whose positive parameters underflow to 0 or overflow after the
        exp transform sit on the boundary of the constrained space and take
        the same -inf route as infeasible trajectories.
        """
        x = np.asarray(x, dtype=float)
        n = self.config.n_days
        theta, _, _ = self._forward(x)
        if theta is None or np.any(theta[1:] <= 0) \
                or not np.all(np.isfinite(theta)):
            return np.full(n, -np.inf)
        out = np.empty(n)
        out[0] = 0.0
        lik = self.config.likelihood
        with np.errstate(over="ignore"):
            if lik == "negbin":
                psi = _exp(x[self._dispersion_idx])
                if not 0.0 < psi < math.inf:
                    return np.full(n, -np.inf)
                out[1:] = negbin_logpmf_series(self._deaths_tail, theta[1:], psi)
            elif lik == "poisson_exp":
                out[1:] = negbin_logpmf_series(self._deaths_tail, theta[1:], 1.0)
            else:
                sigma = _exp(x[self._mix_scale_idx])
                if not 0.0 < sigma < math.inf:
                    return np.full(n, -np.inf)
                tail = _poisson_lognormal_loglik(self._deaths_tail, theta[1:],
                                                 sigma, strict=False)
                if tail is None:
                    return np.full(n, -np.inf)
                out[1:] = tail
        return out

    def log_posterior(self, x) -> float:
        lp, _ = self.log_posterior_with_loglik(x)
        return lp

    def log_posterior_with_loglik(self, x):
        x = np.asarray(x, dtype=float)
        loglik = self.per_obs_loglik(x)
        if not np.isfinite(loglik[0]):  # infeasible-trajectory marker
            return -np.inf, loglik
        lp = self.log_prior(x) + float(loglik.sum())
        if math.isnan(lp):
            raise EstimationError(f"non-finite log posterior at finite point {x!r}")
        return lp, loglik

    def simulate(self, x) -> core.LatentPaths:
        """Latent paths at an unconstrained point (stage-2 reuse)."""
        theta, arrays, _ = self._forward(np.asarray(x, dtype=float))
        n = self.config.n_days
        if theta is None:
            zeros = np.zeros(n)
            return core.LatentPaths(cases=zeros, susceptible=zeros,
                                    infectious=zeros, removed=zeros,
                                    expected_deaths=zeros, reproduction=zeros,
                                    valid=False)
        C, S, I, R, rate_day = arrays
        reproduction = rate_day * self.config.tau * S / self.config.population
        return core.LatentPaths(cases=C, susceptible=S, infectious=I, removed=R,
                                expected_deaths=theta, reproduction=reproduction,
                                valid=True)

    def initial_points(self, rng: np.random.Generator, n_points: int,
                       jitter: float = 0.1, max_tries: int = 200) -> np.ndarray:
        """Feasible starts: prior medians jittered by N(0, jitter) until finite.

        Prior-median infection rates can make the transmission recursion
        overshoot (the lagged S*I product exceeds what is left of S), so when
        jittered medians keep landing on infeasible trajectories the rate
        seeds are damped by successive halvings before jittering again.
        """
        p = self.priors
        median = np.empty(self.n_params)
        J = self.config.n_rate_segments
        median[:J] = p.rate_logmean
        if self._ifr_slice is not None:
            m = np.asarray(p.ifr_means)
            median[self._ifr_slice] = np.log(m) - np.log1p(-m)
        if self._dispersion_idx is not None:
            median[self._dispersion_idx] = math.log(
                stats.gamma.median(p.dispersion_shape, scale=1.0 / p.dispersion_rate))
        if self._mix_scale_idx is not None:
            median[self._mix_scale_idx] = p.mix_scale_logmean
        median[self._init_cases_idx] = math.log(
            stats.gamma.median(p.init_cases_shape, scale=1.0 / p.init_cases_rate))

        tries_per_level = max(1, max_tries // 8)
        points = np.empty((n_points, self.n_params))
        for i in range(n_points):
            found = False
            for level in range(8):
                base = median.copy()
                base[:J] -= level * math.log(2.0)
                for _ in range(tries_per_level):
                    cand = base + jitter * rng.standard_normal(self.n_params)
                    if math.isfinite(self.log_posterior(cand)):
                        points[i] = cand
                        found = True
                        break
                if found:
                    break
            if not found:
                raise EstimationError(
                    "could not find a feasible initial point near the prior medians")
        return points
