"""Deterministic epidemic recursions and delay-distribution machinery.

Everything here is a pure function of its inputs: given a parameter vector and
a model configuration, `simulate_paths` produces the daily total-case series,
the S/I/R compartments, the expected deaths implied by the infection-to-death
delay, and the effective reproduction number. Time is 1-based in the math
(day t) and 0-based in arrays (index t-1).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._kernels import forward_recursion
from .errors import ParameterError

DELAY_KINDS = ("infection_to_death", "serial_interval", "infection_to_recovery")

# Infection-to-onset plus onset-to-death, as (shape, rate) Gamma components.
DEFAULT_DEATH_DELAY = ((1.35, 0.27), (4.94, 0.26))

LIKELIHOODS = ("negbin", "poisson_exp", "poisson_lognormal")


@dataclass(frozen=True)
class DelayPMF:
    """Discretized delay distribution: masses[s-1] is the probability of s days."""

    masses: np.ndarray
    kind: str = "infection_to_death"

    def __post_init__(self):
        if self.kind not in DELAY_KINDS:
            raise ParameterError(f"unknown delay kind {self.kind!r}")
        m = np.asarray(self.masses, dtype=float)
        if np.any(m < 0):
            raise ParameterError("delay masses must be non-negative")
        if m.sum() > 1.0 + 1e-12:
            raise ParameterError("delay masses must sum to at most 1")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)

    @property
    def mean(self) -> float:
        s = np.arange(1, self.masses.size + 1)
        return float(np.sum(s * self.masses))


_pmf_cache: dict = {}

_GRID_STEP = 0.01
_TAIL_QUANTILE = 1.0 - 1e-8


def discretize_delay(components, horizon, kind="infection_to_death",
                     grid_step=_GRID_STEP) -> DelayPMF:
    """Discretize a Gamma (or sum-of-two-Gammas) delay onto whole days.

    Masses follow the half-integer binning rule: the one-day mass integrates
    the density over [0, 1.5) and the s-day mass over [s-0.5, s+0.5) for
    s = 2..horizon-1; the tail beyond the horizon is dropped.

    Parameters
    ----------
    components : sequence of (shape, rate) pairs, one or two entries.
        Two entries mean the delay is the sum of two independent Gammas,
        resolved by deterministic numerical convolution on a grid of step
        `grid_step` truncated at the 1-1e-8 quantile.
    horizon : total number of days n; masses cover s = 1..n-1.

    Results are cached per (components, horizon, grid_step); construction is
    idempotent, so a duplicated first build under concurrency is harmless.
    """
    comps = tuple((float(a), float(b)) for a, b in components)
    if len(comps) not in (1, 2):
        raise ParameterError("delay spec needs one or two Gamma components")
    for shape, rate in comps:
        if shape <= 0 or rate <= 0:
            raise ParameterError(f"non-positive Gamma parameter in {(shape, rate)}")
    if horizon < 3:
        raise ParameterError("horizon must be at least 3 days")

    key = (comps, int(horizon), float(grid_step), kind)
    hit = _pmf_cache.get(key)
    if hit is not None:
        return hit

    if len(comps) == 1:
        shape, rate = comps[0]
        dist = stats.gamma(shape, scale=1.0 / rate)
        edges = np.concatenate(([0.0], np.arange(1, horizon - 1) + 0.5))
        masses = np.diff(np.append(dist.cdf(edges), dist.cdf(horizon - 0.5)))
    else:
        masses = _convolved_masses(comps, horizon, grid_step)

    pmf = DelayPMF(masses=masses, kind=kind)
    _pmf_cache[key] = pmf
    return pmf


def _convolved_masses(comps, horizon, dx):
    # Day mass of the sum X1+X2 over bin [a, b):
    #   integral of f1(t) * (F2(b-t) - F2(a-t)) dt,
    # evaluated per grid cell of component 1 with its exact cell mass and exact
    # first moment (via the shape+1 Gamma identity). The first-moment correction
    # makes the quadrature error O(dx^3), so day masses stay stable well below
    # the 1e-8 level under grid halving.
    (s1, r1), (s2, r2) = comps
    d1 = stats.gamma(s1, scale=1.0 / r1)
    d1_up = stats.gamma(s1 + 1.0, scale=1.0 / r1)
    d2 = stats.gamma(s2, scale=1.0 / r2)

    upper = d1.ppf(_TAIL_QUANTILE)
    k = int(np.ceil(upper / dx)) + 1
    edges = np.arange(k + 1) * dx
    cell_mass = np.diff(d1.cdf(edges))
    cell_t = (s1 / r1) * np.diff(d1_up.cdf(edges))
    centers = 0.5 * (edges[:-1] + edges[1:])
    cell_mu = cell_t - cell_mass * centers

    bin_edges = np.concatenate(([0.0], np.arange(1, horizon - 1) + 0.5,
                                [horizon - 0.5]))
    shifted = bin_edges[:, None] - centers[None, :]
    g0 = np.diff(d2.cdf(shifted), axis=0)
    g1 = np.diff(d2.pdf(shifted), axis=0)
    masses = g0 @ cell_mass - g1 @ cell_mu
    # the moment correction can leave ~1e-30 negative noise in the far tail
    masses[(masses < 0) & (masses > -1e-12)] = 0.0
    return masses


@dataclass(frozen=True)
class ModelFlags:
    """Structural switches selecting the model variant."""

    exposed: bool = True
    vaccination: bool = False
    demography: bool = False
    seirs: bool = False

    @classmethod
    def from_name(cls, name: str) -> "ModelFlags":
        """Parse names like 'sir', 'seir.vacc.dem', 'seir.vacc.seirs'."""
        parts = name.lower().split(".")
        base, extras = parts[0], parts[1:]
        if base not in ("sir", "seir"):
            raise ParameterError(f"model name must start with sir or seir, got {name!r}")
        known = {"vacc", "dem", "seirs"}
        bad = set(extras) - known
        if bad:
            raise ParameterError(f"unknown model extensions {sorted(bad)} in {name!r}")
        return cls(exposed=(base == "seir"), vaccination="vacc" in extras,
                   demography="dem" in extras, seirs="seirs" in extras)

    @property
    def name(self) -> str:
        parts = ["seir" if self.exposed else "sir"]
        if self.vaccination:
            parts.append("vacc")
        if self.demography:
            parts.append("dem")
        if self.seirs:
            parts.append("seirs")
        return ".".join(parts)


@dataclass(frozen=True)
class ModelConfig:
    """Structural constants of one model variant tied to a series of n days.

    `changepoints` is the full grid u_0..u_J with u_0 = 1 and u_J = n - h - 1;
    `ifr_breaks` is the full grid l_1..l_{B+1} with l_1 = 1 and l_{B+1} = n + 1.
    Use `build` to supply only the interior points.
    """

    n_days: int
    population: float
    changepoints: tuple
    ifr_breaks: tuple
    infectious_period: int = 6
    exposed_period: int = 2
    flags: ModelFlags = field(default_factory=ModelFlags)
    likelihood: str = "negbin"
    immunity_prob_first: float = 0.4
    immunity_prob_second: float = 0.1
    births_per_day: float = 0.0
    waning_delay: int = 0
    recovery_delay: tuple = ()
    death_delay: tuple = DEFAULT_DEATH_DELAY

    def __post_init__(self):
        n, tau, h = self.n_days, self.infectious_period, self.h
        if self.population <= 0:
            raise ParameterError("population must be positive")
        if tau < 1:
            raise ParameterError("infectious period must be at least 1 day")
        if self.exposed_period < 0:
            raise ParameterError("exposed period cannot be negative")
        if n < tau + h + 2:
            raise ParameterError(
                f"need at least tau+h+2 = {tau + h + 2} days, got {n}")
        u = self.changepoints
        if u[0] != 1 or u[-1] != n - h - 1 or any(a >= b for a, b in zip(u, u[1:])):
            raise ParameterError(
                f"changepoints must rise strictly from 1 to n-h-1 = {n - h - 1}, got {u}")
        br = self.ifr_breaks
        if br[0] != 1 or br[-1] != n + 1 or any(a >= b for a, b in zip(br, br[1:])):
            raise ParameterError(
                f"ifr breaks must rise strictly from 1 to n+1 = {n + 1}, got {br}")
        a1, a2 = self.immunity_prob_first, self.immunity_prob_second
        if a1 < 0 or a2 < 0 or a1 + a2 > 1:
            raise ParameterError("immunity probabilities must be >= 0 with a1 + a2 <= 1")
        if self.births_per_day < 0:
            raise ParameterError("births per day cannot be negative")
        if self.likelihood not in LIKELIHOODS:
            raise ParameterError(f"unknown likelihood {self.likelihood!r}")
        if self.flags.seirs:
            if self.waning_delay < 1:
                raise ParameterError("SEIRS needs a positive waning delay")
            if len(self.recovery_delay) == 0:
                raise ParameterError(
                    "SEIRS needs an explicit recovery-delay Gamma (shape, rate); "
                    "no published default is assumed")

    @classmethod
    def build(cls, n_days, population, interior_changepoints=(),
              interior_ifr_breaks=(), **kwargs):
        flags = kwargs.get("flags", ModelFlags())
        h = kwargs.get("exposed_period", 2) if flags.exposed else 0
        u = (1, *interior_changepoints, n_days - h - 1)
        br = (1, *interior_ifr_breaks, n_days + 1)
        return cls(n_days=n_days, population=population, changepoints=u,
                   ifr_breaks=br, **kwargs)

    @property
    def h(self) -> int:
        """Effective exposed period: 0 unless the exposed flag is on."""
        return self.exposed_period if self.flags.exposed else 0

    @property
    def tau(self) -> int:
        return self.infectious_period

    @property
    def n_rate_segments(self) -> int:
        return len(self.changepoints) - 1

    @property
    def n_ifr_segments(self) -> int:
        return len(self.ifr_breaks) - 1

    def death_delay_pmf(self) -> DelayPMF:
        return discretize_delay(self.death_delay, self.n_days)

    def recovery_delay_pmf(self) -> DelayPMF:
        return discretize_delay((self.recovery_delay,), self.n_days,
                                kind="infection_to_recovery")


@dataclass(frozen=True)
class ParamVector:
    """Free parameters of one model variant.

    `mix_scale` is only meaningful for the Poisson-LogNormal likelihood;
    `dispersion` only for the Negative Binomial one.
    """

    rates: np.ndarray
    ifrs: np.ndarray
    dispersion: float = 1.0
    init_cases: float = 1.0
    mix_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "rates", np.asarray(self.rates, dtype=float))
        object.__setattr__(self, "ifrs", np.asarray(self.ifrs, dtype=float))

    def validate(self):
        """Strict positivity checks used before sampling; the forward map itself
        tolerates boundary values like init_cases = 0."""
        if np.any(self.rates <= 0):
            raise ParameterError("infection rates must be strictly positive")
        if np.any((self.ifrs <= 0) | (self.ifrs >= 1)):
            raise ParameterError("IFRs must lie strictly inside (0, 1)")
        if self.dispersion <= 0 or self.init_cases <= 0 or self.mix_scale <= 0:
            raise ParameterError("dispersion, init_cases and mix_scale must be positive")


@dataclass
class LatentPaths:
    """Deterministic daily trajectories implied by one parameter vector."""

    cases: np.ndarray
    susceptible: np.ndarray
    infectious: np.ndarray
    removed: np.ndarray
    expected_deaths: np.ndarray
    reproduction: np.ndarray
    valid: bool


def rate_at(t, rates, changepoints):
    """Piecewise-constant infection rate at day t.

    Returns rates[j] for t in [u_j, u_{j+1} - 1]; valid only for
    t in [u_0, u_J - 1].
    """
    u = changepoints
    if not u[0] <= t <= u[-1] - 1:
        raise ParameterError(f"day {t} outside the rate grid [{u[0]}, {u[-1] - 1}]")
    j = int(np.searchsorted(u, t, side="right")) - 1
    return rates[j]


def rate_series(rates, changepoints, n) -> np.ndarray:
    """Per-day rate for days 1..n; past the grid the last segment is carried."""
    if len(rates) != len(changepoints) - 1:
        raise ParameterError(
            f"{len(rates)} rates do not fit {len(changepoints) - 1} segments")
    lengths = np.diff(changepoints)
    out = np.repeat(np.asarray(rates, dtype=float), lengths)
    if out.size < n:
        out = np.concatenate([out, np.full(n - out.size, rates[-1])])
    return out[:n]


def ifr_series(ifrs, breaks, n) -> np.ndarray:
    """Per-day IFR for days 1..n from the piecewise-constant break grid."""
    if len(ifrs) != len(breaks) - 1:
        raise ParameterError(f"{len(ifrs)} IFRs do not fit {len(breaks) - 1} segments")
    lengths = np.diff(breaks)
    out = np.repeat(np.asarray(ifrs, dtype=float), lengths)
    return out[:n]


def births_per_day(youngest_count, group_width_years) -> float:
    """Daily births from the youngest age group's size and width in years."""
    if youngest_count < 0:
        raise ParameterError("youngest age-group count cannot be negative")
    if group_width_years <= 0:
        raise ParameterError("age-group width must be positive")
    return youngest_count / (365.0 * group_width_years)


def vaccination_removals(doses, t, a1, a2, n, h) -> float:
    """People moved to the removed state at day t by first doses given earlier.

    A dose at day s removes a1 people at s+14 and a2 more at s+35, provided
    the removal day falls in [15, n-h-2] resp. [36, n-h-2].
    """
    out = 0.0
    if 15 <= t <= n - h - 2:
        out += a1 * doses[t - 14 - 1]
    if 36 <= t <= n - h - 2:
        out += a2 * doses[t - 35 - 1]
    return out


def vaccination_series(doses, a1, a2, n, h) -> np.ndarray:
    """Vectorized `vaccination_removals` for days 1..n."""
    doses = np.asarray(doses, dtype=float)
    if np.any(doses < 0):
        raise ParameterError("vaccination doses cannot be negative")
    out = np.zeros(n)
    hi = n - h - 2
    if hi >= 15:
        out[14:hi] += a1 * doses[0:hi - 14]
    if hi >= 36:
        out[35:hi] += a2 * doses[0:hi - 35]
    return out


def waning_reentry(cases, ifr_path, recovery_pmf, t) -> float:
    """Survivors of past infections who lose immunity and re-enter S at day t."""
    if t < 2:
        raise ParameterError("re-entry is defined from day 2 on")
    masses = recovery_pmf.masses if isinstance(recovery_pmf, DelayPMF) else recovery_pmf
    acc = 0.0
    for k in range(1, t):
        d = t - k
        if d - 1 < len(masses):
            acc += masses[d - 1] * cases[k - 1]
    return (1.0 - ifr_path[t - 1]) * acc


def simulate_paths(params: ParamVector, config: ModelConfig, doses=None) -> LatentPaths:
    """Forward map from parameters to latent daily paths.

    The first tau+h case values are the seed `init_cases`; afterwards each
    day's cases are rate * S * I / N read an exposed period earlier. Expected
    deaths convolve past cases with the infection-to-death delay and scale by
    the day's IFR. An infeasible trajectory (negative or non-finite state) is
    returned with valid=False rather than raised, so a posterior can map it
    to -inf.
    """
    n = config.n_days
    if len(params.rates) != config.n_rate_segments:
        raise ParameterError(
            f"{len(params.rates)} rates for {config.n_rate_segments} segments")
    if len(params.ifrs) != config.n_ifr_segments:
        raise ParameterError(
            f"{len(params.ifrs)} IFRs for {config.n_ifr_segments} segments")

    rate_day = rate_series(params.rates, config.changepoints, n)
    ifr_day = ifr_series(params.ifrs, config.ifr_breaks, n)

    if config.flags.vaccination:
        if doses is None:
            raise ParameterError("vaccination flag is on but no dose series given")
        vacc = vaccination_series(doses, config.immunity_prob_first,
                                  config.immunity_prob_second, n, config.h)
    else:
        vacc = np.zeros(n)

    if config.flags.seirs:
        recovery = config.recovery_delay_pmf().masses
    else:
        recovery = np.zeros(1)

    C, S, I, R, valid = forward_recursion(
        n, float(config.population), config.tau, config.h,
        float(params.init_cases), rate_day, ifr_day, vacc,
        float(config.births_per_day) if config.flags.demography else 0.0,
        config.flags.demography, config.flags.seirs,
        int(config.waning_delay), recovery)

    theta = np.zeros(n)
    if valid:
        death_pmf = config.death_delay_pmf().masses
        conv = np.convolve(C, death_pmf)
        theta[1:] = ifr_day[1:] * conv[:n - 1]

    reproduction = rate_day * config.tau * S / config.population
    return LatentPaths(cases=C, susceptible=S, infectious=I, removed=R,
                       expected_deaths=theta, reproduction=reproduction,
                       valid=bool(valid))


def reproduction_series(paths: LatentPaths, params: ParamVector,
                        config: ModelConfig) -> np.ndarray:
    """Effective reproduction number rate * tau * S / N for days 1..n."""
    if not paths.valid:
        raise ParameterError("cannot compute reproduction numbers on an invalid path")
    rate_day = rate_series(params.rates, config.changepoints, config.n_days)
    return rate_day * config.tau * paths.susceptible / config.population
