"""Posterior samplers: Hamiltonian Monte Carlo and simulated annealing.

The HMC sampler is plain leapfrog with a jittered number of steps, dual
averaging of the step size toward a target acceptance rate, and diagonal
mass-matrix estimation over expanding warmup windows. Chains are independent:
each gets its own RNG stream spawned from the master seed through
`numpy.random.SeedSequence`, so results are reproducible and chain order
never matters.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GradientError, ParameterError, SamplerError

_CBRT_EPS = float(np.finfo(float).eps) ** (1.0 / 3.0)


def grad(logpost, x):
    """Central finite-difference gradient of a log density.

    Per-coordinate step cbrt(machine eps) * max(1, |x_i|). An analytic or
    automatic gradient with the same signature can replace this anywhere a
    gradient callable is accepted.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        h = _CBRT_EPS * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        fp = logpost(xp)
        fm = logpost(xm)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise GradientError(
                f"non-finite log density while differencing coordinate {i}")
        out[i] = (fp - fm) / (2.0 * h)
    return out


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs of the HMC run; defaults favor robustness over speed."""

    warmup: int = 1000
    draws: int = 1000
    target_accept: float = 0.8
    min_leapfrog: int = 1
    max_leapfrog: int = 32
    initial_step_size: float = 0.0   # 0 -> coarse search at initialization
    adapt_mass: bool = True
    divergence_threshold: float = 1000.0
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.warmup <= 0 or self.draws <= 0:
            raise ParameterError("warmup and draws must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ParameterError("target acceptance must lie in (0, 1)")
        if not 1 <= self.min_leapfrog <= self.max_leapfrog:
            raise ParameterError("need 1 <= min_leapfrog <= max_leapfrog")
        if self.thin < 1 or self.draws // self.thin < 1:
            raise ParameterError("thinning must retain at least one draw")


@dataclass
class ChainDraws:
    """Retained draws of one chain with bookkeeping for the diagnostics."""

    unconstrained: np.ndarray          # (M, P)
    constrained: np.ndarray            # (M, P)
    lp: np.ndarray                     # (M,)
    loglik: np.ndarray | None = None   # (M, n_obs) filled by the fit pipeline
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.unconstrained.shape[0]


class _DualAveraging:
    """Nesterov dual averaging of log step size (gamma/t0/kappa as usual)."""

    def __init__(self, step, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * step)
        self.log_step = math.log(step)
        self.log_avg = math.log(step)
        self.h_bar = 0.0
        self.count = 0
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa

    def update(self, accept_prob):
        self.count += 1
        frac = 1.0 / (self.count + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_prob)
        self.log_step = self.mu - math.sqrt(self.count) / self.gamma * self.h_bar
        eta = self.count ** -self.kappa
        self.log_avg = eta * self.log_step + (1.0 - eta) * self.log_avg

    @property
    def step(self):
        return math.exp(self.log_step)

    @property
    def averaged_step(self):
        return math.exp(self.log_avg)


def _mass_windows(warmup):
    """End iterations (exclusive) of the expanding mass-adaptation windows.

    All windows close by ~55% of warmup: the remainder is one uninterrupted
    dual-averaging stretch, which keeps the frozen averaged step close to the
    target acceptance (short terminal segments park it visibly above).
    """
    if warmup < 40:
        return []
    init_buf = min(75, warmup // 5)
    close_by = int(0.55 * warmup)
    window = 25
    ends = []
    pos = init_buf
    while pos + window <= close_by:
        end = pos + window
        if end + 2 * window > close_by:
            end = close_by
        ends.append(end)
        pos = end
        window *= 2
    return ends


def _leapfrog(grad_fn, x, p, step, inv_mass, n_steps):
    x = x.copy()
    p = p.copy()
    g = grad_fn(x)
    for _ in range(n_steps):
        p = p + 0.5 * step * g
        x = x + step * inv_mass * p
        g = grad_fn(x)
        p = p + 0.5 * step * g
    return x, p


def _kinetic(p, inv_mass):
    return 0.5 * float(p @ (inv_mass * p))


def _init_step_size(logpost, grad_fn, x, lp0, inv_mass, rng):
    """Double/halve one leapfrog step until the acceptance crosses 1/2."""
    step = 1.0
    p = rng.standard_normal(x.size) / np.sqrt(inv_mass)
    h0 = -lp0 + _kinetic(p, inv_mass)

    def log_accept(s):
        try:
            x1, p1 = _leapfrog(grad_fn, x, p, s, inv_mass, 1)
        except GradientError:
            return -np.inf
        lp1 = logpost(x1)
        if not math.isfinite(lp1):
            return -np.inf
        return h0 - (-lp1 + _kinetic(p1, inv_mass))

    half = math.log(0.5)
    direction = 1 if log_accept(step) > half else -1
    for _ in range(60):
        step *= 2.0 ** direction
        la = log_accept(step)
        if direction == 1 and la <= half:
            step /= 2.0  # back to the last step that still accepted
            break
        if direction == -1 and la > half:
            break
    return step


def hmc_sample(logpost, grad_fn=None, config: SamplerConfig | None = None,
               chains: int = 4, init=None, constrain=None):
    """Sample with HMC; returns one ChainDraws per chain.

    Parameters
    ----------
    logpost : callable x -> float, the unnormalized log density.
    grad_fn : optional callable x -> gradient; finite differences otherwise.
    init : (P,) or (chains, P) starting points; logpost must be finite there.
    constrain : optional callable x -> constrained mirror (identity if None).

    Divergences (energy error above the configured threshold, or a failed
    gradient) reject the proposal and are recorded per iteration; a warmup
    in which every iteration diverges raises SamplerError.
    """
    config = config or SamplerConfig()
    if init is None:
        raise ParameterError("hmc_sample needs an initialization point")
    init = np.atleast_2d(np.asarray(init, dtype=float))
    if init.shape[0] == 1 and chains > 1:
        init = np.repeat(init, chains, axis=0)
    if init.shape[0] != chains:
        raise ParameterError(f"{init.shape[0]} init points for {chains} chains")
    if grad_fn is None:
        grad_fn = lambda x: grad(logpost, x)
    if constrain is None:
        constrain = lambda x: x

    streams = np.random.SeedSequence(config.seed).spawn(chains)
    return [_run_chain(logpost, grad_fn, config, init[c], constrain,
                       np.random.default_rng(streams[c]), c)
            for c in range(chains)]


def _run_chain(logpost, grad_fn, config, x0, constrain, rng, chain_index):
    x = np.asarray(x0, dtype=float).copy()
    lp = logpost(x)
    if not math.isfinite(lp):
        raise SamplerError(f"chain {chain_index}: log density not finite at init")
    dim = x.size
    inv_mass = np.ones(dim)

    step = config.initial_step_size
    if step <= 0:
        step = _init_step_size(logpost, grad_fn, x, lp, inv_mass, rng)
    averaging = _DualAveraging(step, config.target_accept)
    windows = _mass_windows(config.warmup) if config.adapt_mass else []
    window_buf = []
    adapt_record = []

    n_keep = config.draws // config.thin
    kept_u = np.empty((n_keep, dim))
    kept_lp = np.empty(n_keep)
    keep_idx = 0
    div_warmup = []
    div_sampling = []
    accept_sum = 0.0
    leapfrog_total = 0

    total = config.warmup + config.draws
    for it in range(total):
        in_warmup = it < config.warmup
        p = rng.standard_normal(dim) / np.sqrt(inv_mass)
        n_steps = int(rng.integers(config.min_leapfrog, config.max_leapfrog + 1))
        leapfrog_total += n_steps
        h0 = -lp + _kinetic(p, inv_mass)

        divergent = False
        try:
            x_new, p_new = _leapfrog(grad_fn, x, p, step, inv_mass, n_steps)
            lp_new = logpost(x_new)
            h1 = -lp_new + _kinetic(p_new, inv_mass)
            energy_error = h1 - h0
            if not math.isfinite(energy_error) \
                    or energy_error > config.divergence_threshold:
                divergent = True
        except GradientError:
            divergent = True

        if divergent:
            accept_prob = 0.0
            (div_warmup if in_warmup else div_sampling).append(it)
        else:
            accept_prob = 1.0 if energy_error <= 0 \
                else math.exp(-energy_error)
            if rng.uniform() < accept_prob:
                x, lp = x_new, lp_new

        if in_warmup:
            averaging.update(accept_prob)
            step = averaging.step
            window_buf.append(x.copy())
            if windows and it + 1 == windows[0]:
                draws_arr = np.asarray(window_buf)
                m = draws_arr.shape[0]
                var = draws_arr.var(axis=0, ddof=1) if m > 1 else np.ones(dim)
                inv_mass = (m / (m + 5.0)) * var + (5.0 / (m + 5.0)) * 1e-3
                window_buf = []
                windows = windows[1:]
                step = averaging.averaged_step
                averaging = _DualAveraging(step, config.target_accept)
                averaging.mu = math.log(step)  # restart without exploration bias
                adapt_record.append({"iteration": it + 1, "step_size": step})
            if it + 1 == config.warmup:
                if len(div_warmup) == config.warmup:
                    raise SamplerError(
                        f"chain {chain_index}: every warmup iteration diverged")
                step = averaging.averaged_step
                adapt_record.append({"iteration": it + 1, "step_size": step})
        else:
            accept_sum += accept_prob
            k = it - config.warmup
            if (k + 1) % config.thin == 0 and keep_idx < n_keep:
                kept_u[keep_idx] = x
                kept_lp[keep_idx] = lp
                keep_idx += 1

    kept_u = kept_u[:keep_idx]
    kept_lp = kept_lp[:keep_idx]
    kept_c = np.asarray([constrain(row) for row in kept_u])
    meta = {
        "chain": chain_index,
        "seed": config.seed,
        "step_size": step,
        "inv_mass": inv_mass.copy(),
        "accept_rate": accept_sum / config.draws,
        "divergences": len(div_sampling),
        "divergence_iterations": div_sampling,
        "warmup_divergences": len(div_warmup),
        "n_leapfrog": leapfrog_total,
        "adaptation": adapt_record,
    }
    return ChainDraws(unconstrained=kept_u, constrained=kept_c, lp=kept_lp,
                      meta=meta)


# ------------------------------------------------------- simulated annealing

@dataclass
class AnnealResult:
    point: np.ndarray
    value: float
    final_point: np.ndarray
    final_value: float
    n_improvements: int
    accept_rate: float


def geometric_schedule(t_start, t_end, steps):
    """Strictly decreasing geometric cooling from t_start to t_end."""
    if not (t_start > t_end > 0):
        raise ParameterError("need t_start > t_end > 0")
    return t_start * (t_end / t_start) ** (np.arange(steps) / (steps - 1.0))


def simulated_annealing(logpost, init, schedule, seed=0, step_scale=0.1):
    """Random-walk Metropolis maximization under a cooling schedule.

    The Gaussian proposal scale shrinks with sqrt(temperature) so late moves
    are local; the best point ever evaluated is returned. Results are known
    to be sensitive to the starting point on multimodal targets; run several
    seeds if that matters.
    """
    schedule = np.asarray(schedule, dtype=float)
    if schedule.ndim != 1 or schedule.size < 1:
        raise ParameterError("schedule must be a 1-d temperature array")
    if np.any(schedule < 0):
        raise ParameterError("temperatures cannot be negative")
    if np.any(np.diff(schedule) >= 0):
        raise ParameterError("temperatures must be strictly decreasing")

    rng = np.random.default_rng(seed)
    x = np.asarray(init, dtype=float).copy()
    f = logpost(x)
    if not math.isfinite(f):
        raise SamplerError("simulated annealing needs a finite starting value")
    best_x, best_f = x.copy(), f
    improvements = 0
    accepted = 0

    for temp in schedule:
        scale = step_scale * math.sqrt(max(temp, 1e-12))
        cand = x + scale * rng.standard_normal(x.size)
        f_cand = logpost(cand)
        if math.isfinite(f_cand) and f_cand > best_f:
            best_x, best_f = cand.copy(), f_cand
            improvements += 1
        delta = f_cand - f
        if math.isfinite(f_cand):
            if delta >= 0 or (temp > 0 and rng.uniform() < math.exp(delta / temp)):
                x, f = cand, f_cand
                accepted += 1

    return AnnealResult(point=best_x, value=best_f, final_point=x.copy(),
                        final_value=f, n_improvements=improvements,
                        accept_rate=accepted / schedule.size)
