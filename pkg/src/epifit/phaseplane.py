"""Epidemic dynamics on the susceptible-infectious plane.

All computations use proportions of the population (S/N, I/N): the conserved
quantity sits near 1 on that scale and the intervention measures become
dimensionless. Continuous flows are integrated with classical fourth-order
Runge-Kutta; discrete daily courses come straight from the model's latent
paths.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError

_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class SirField:
    """Continuous SIR vector field on proportions:
    ds/dt = -rate * s * i,  di/dt = rate * s * i - i / infectious_period."""

    rate: float
    infectious_period: float
    population: float = 1.0

    def __post_init__(self):
        if self.rate < 0 or self.infectious_period <= 0 or self.population <= 0:
            raise ParameterError("field parameters must be positive (rate >= 0)")

    def __call__(self, s, i):
        flow = self.rate * s * i
        return -flow, flow - i / self.infectious_period


@dataclass
class Trajectory:
    """A time-indexed curve on the unit square of (S, I) proportions."""

    times: np.ndarray
    s: np.ndarray
    i: np.ndarray
    label: str = "actual"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        self.i = np.asarray(self.i, dtype=float)
        if not (self.times.size == self.s.size == self.i.size):
            raise ParameterError("times, s and i must have equal lengths")
        if not (np.all(np.isfinite(self.s)) and np.all(np.isfinite(self.i))):
            raise ParameterError("trajectory coordinates must be finite")
        low, high = -_EDGE_TOL, 1.0 + _EDGE_TOL
        if np.any(self.s < low) or np.any(self.s > high) \
                or np.any(self.i < low) or np.any(self.i > high):
            raise ParameterError("trajectory leaves the unit square")

    def __len__(self):
        return self.times.size

    def index_of(self, t) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-9))
        if hits.size == 0:
            raise ParameterError(f"time {t} is not on the trajectory grid")
        return int(hits[0])


def course_from_paths(paths, population, label="actual") -> Trajectory:
    """Daily (S/N, I/N) course of simulated latent paths."""
    n = paths.susceptible.size
    return Trajectory(times=np.arange(1.0, n + 1.0),
                      s=paths.susceptible / population,
                      i=paths.infectious / population, label=label)


def natural_course(field: SirField, start, horizon, dt,
                   label="natural") -> Trajectory:
    """Integrate the unperturbed flow with classical RK4.

    `start` is the (s0, i0) proportion pair, `horizon` the total time span and
    `dt` the fixed step. The state must stay inside the unit square to within
    1e-9 or the integration aborts.
    """
    if dt <= 0:
        raise ParameterError("dt must be positive")
    s, i = float(start[0]), float(start[1])
    _check_square(s, i, 0.0)
    n_steps = int(round(horizon / dt))
    times = np.empty(n_steps + 1)
    ss = np.empty(n_steps + 1)
    ii = np.empty(n_steps + 1)
    times[0], ss[0], ii[0] = 0.0, s, i
    for k in range(1, n_steps + 1):
        s, i = _rk4_step(field, s, i, dt)
        _check_square(s, i, k * dt)
        times[k], ss[k], ii[k] = k * dt, s, i
    return Trajectory(times=times, s=np.clip(ss, 0.0, 1.0),
                      i=np.clip(ii, 0.0, 1.0), label=label)


def _rk4_step(field, s, i, dt):
    k1s, k1i = field(s, i)
    k2s, k2i = field(s + 0.5 * dt * k1s, i + 0.5 * dt * k1i)
    k3s, k3i = field(s + 0.5 * dt * k2s, i + 0.5 * dt * k2i)
    k4s, k4i = field(s + dt * k3s, i + dt * k3i)
    return (s + dt * (k1s + 2 * k2s + 2 * k3s + k4s) / 6.0,
            i + dt * (k1i + 2 * k2i + 2 * k3i + k4i) / 6.0)


def _check_square(s, i, t):
    if not (math.isfinite(s) and math.isfinite(i)):
        raise DomainError(f"integration diverged at t = {t:g}")
    if s < -_EDGE_TOL or s > 1.0 + _EDGE_TOL or i < -_EDGE_TOL or i > 1.0 + _EDGE_TOL:
        raise DomainError(
            f"state ({s:.3g}, {i:.3g}) left the unit square at t = {t:g}")


def daily_course(field: SirField, start, days, dt=0.01,
                 label="natural") -> Trajectory:
    """RK4 integration sampled at whole days 0..days, aligned for comparisons."""
    per_day = max(1, int(round(1.0 / dt)))
    fine = natural_course(field, start, float(days), 1.0 / per_day, label=label)
    idx = np.arange(0, days + 1) * per_day
    return Trajectory(times=fine.times[idx].round(), s=fine.s[idx],
                      i=fine.i[idx], label=label)


# ----------------------------------------------------------------- measures

def speed_series(traj: Trajectory) -> np.ndarray:
    """Per-step displacement speed v_t between consecutive trajectory points."""
    if len(traj) < 2:
        raise ParameterError("speed needs a trajectory of length at least 2")
    return np.hypot(np.diff(traj.s), np.diff(traj.i))


def work(traj: Trajectory, a, b) -> float:
    """Summed squared displacement (epidemic work) over times [a, b]."""
    ia, ib = traj.index_of(a), traj.index_of(b)
    if ia > ib:
        raise ParameterError("need a <= b within the trajectory range")
    if ia == ib:
        warnings.warn("degenerate interval: work over [a, a] is zero")
        return 0.0
    ds = np.diff(traj.s[ia:ib + 1])
    di = np.diff(traj.i[ia:ib + 1])
    return float(np.sum(ds * ds + di * di))


def _aligned(natural: Trajectory, actual: Trajectory, a, b):
    ia, ib = natural.index_of(a), natural.index_of(b)
    ja, jb = actual.index_of(a), actual.index_of(b)
    if ib - ia != jb - ja:
        raise ParameterError("courses cover [a, b] with different grids")
    if not np.allclose(natural.times[ia:ib + 1], actual.times[ja:jb + 1],
                       rtol=0, atol=1e-9):
        raise ParameterError("courses are not on the same time grid over [a, b]")
    return (natural.s[ia:ib + 1], natural.i[ia:ib + 1],
            actual.s[ja:jb + 1], actual.i[ja:jb + 1])


def effectiveness_displacement(natural: Trajectory, actual: Trajectory,
                               a, b) -> float:
    """Relative between-course displacement summed over [a, b].

    Each day contributes the distance between the two positions scaled by the
    natural course's distance from the origin; identical courses give exactly
    zero.
    """
    sn, in_, sa, ia = _aligned(natural, actual, a, b)
    denom = sn * sn + in_ * in_
    if np.any(denom == 0.0):
        raise DomainError("natural course passes through the origin")
    num = (sn - sa) ** 2 + (in_ - ia) ** 2
    return float(np.sum(np.sqrt(num / denom)))


def effectiveness_work(natural: Trajectory, actual: Trajectory, a, b) -> float:
    """Relative work reduction (W_natural - W_actual) / W_natural over [a, b].

    Positive values mean the actual (or scenario) course moves less, which is
    the better outcome; lower speed indicates a milder epidemic course.
    """
    w_nat = work(natural, a, b)
    w_act = work(actual, a, b)
    if w_nat == 0.0:
        raise DomainError("natural course does no work on [a, b]; measure undefined")
    return float((w_nat - w_act) / w_nat)


# --------------------------------------------------------- conserved quantity

@dataclass
class ConservedQuantity:
    """Daily Q_t series with its running mean and the detected departure day."""

    values: np.ndarray
    ergodic_mean: np.ndarray
    departure_day: float | None
    slopes: np.ndarray
    t_stats: np.ndarray


_WINDOW = 28
_RUN = 7
_T_CRIT = -3.0
# a window must lose at least this fraction of the level to count as a trend;
# exactly-conserved series drift at float precision with huge t-statistics
_DECLINE_FLOOR = 1e-9


def conserved_q(traj: Trajectory, rates, infectious_period) -> ConservedQuantity:
    """Q_t = S_t + I_t - log(S_t) / (rate_t * tau) along a trajectory.

    Constant under the exact constant-rate SIR flow, so a sustained drift
    flags departure from the SIR assumption. The departure day is the first
    day opening a run of 7 where the trailing 28-day least-squares slope is
    negative with a t-statistic below -3 and the window's total decline
    exceeds integration noise; None if that never happens.
    """
    if np.any(traj.s <= 0):
        raise DomainError("Q is undefined where the susceptible proportion is <= 0")
    rates = np.broadcast_to(np.asarray(rates, dtype=float), traj.s.shape)
    if np.any(rates <= 0) or infectious_period <= 0:
        raise ParameterError("rates and infectious period must be positive")
    q = traj.s + traj.i - np.log(traj.s) / (rates * infectious_period)
    ergodic = np.cumsum(q) / np.arange(1, q.size + 1)

    n = q.size
    slopes = np.full(n, np.nan)
    tstats = np.full(n, np.nan)
    x = np.arange(_WINDOW, dtype=float)
    sxx = float(np.sum((x - x.mean()) ** 2))
    for d in range(_WINDOW - 1, n):
        y = q[d - _WINDOW + 1:d + 1]
        slope = float(np.sum((x - x.mean()) * (y - y.mean()))) / sxx
        resid = y - y.mean() - slope * (x - x.mean())
        sigma2 = float(resid @ resid) / (_WINDOW - 2)
        if sigma2 <= 0:
            continue  # perfectly linear window: no noise scale to test against
        slopes[d] = slope
        tstats[d] = slope / math.sqrt(sigma2 / sxx)

    level = np.maximum(np.abs(ergodic), 1e-12)
    floor = _DECLINE_FLOOR * level / (_WINDOW - 1)
    flagged = (slopes < -floor) & (tstats < _T_CRIT)
    departure = None
    for d in range(n - _RUN + 1):
        if flagged[d:d + _RUN].all():
            departure = float(traj.times[d])
            break
    return ConservedQuantity(values=q, ergodic_mean=ergodic,
                             departure_day=departure, slopes=slopes,
                             t_stats=tstats)


def sir_deviation(q_model, q_reference) -> np.ndarray:
    """Squared gap between two Q series: the model's deviation from plain SIR."""
    return (np.asarray(q_model, dtype=float)
            - np.asarray(q_reference, dtype=float)) ** 2
