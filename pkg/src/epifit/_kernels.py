"""Hot inner loops, JIT-compiled when numba is available.

The forward recursion is inherently sequential (each day's infections read the
susceptible/infectious state an exposed-period earlier), so it cannot be
vectorized; numba makes it cheap enough to sit inside an HMC gradient loop.
A plain-Python fallback keeps the package importable without numba.
"""

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only on numba-less installs
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


@njit(cache=True)
def forward_recursion(n, pop, tau, h, init_cases, rate_day, ifr_day, vacc,
                      births, demography, seirs, waning_delay, recovery_pmf):
    """Run the daily case/compartment recursion.

    Day t (1-based) lives at index t-1. Ranges follow the model definition:
    cases obey the transmission recursion for t in [tau+h+1, n-1], the
    compartment updates run for t in [tau, n-h-2], and outside those ranges
    values are carried forward unchanged (cases before tau+h+1 are the seed).

    Returns (cases, susceptible, infectious, removed, valid); valid is False
    as soon as any state is negative, exceeds the population, or is
    non-finite. States are never clamped.
    """
    C = np.zeros(n)
    S = np.zeros(n)
    I = np.zeros(n)
    R = np.zeros(n)

    seed_end = min(tau + h, n)
    for i in range(seed_end):
        C[i] = init_cases

    S[0] = pop - C[0]
    I[0] = C[0]
    R[0] = 0.0
    if not (0.0 <= S[0] <= pop) or not np.isfinite(S[0]):
        return C, S, I, R, False

    # Prefix accumulator for the removed state (additions only, no cancellation);
    # the infectious window is summed directly because a sliding add/subtract
    # accumulator loses precision once cases decay over many orders of magnitude.
    removed_cum = 0.0        # sum of C over days 1..t-tau

    for i in range(1, n):
        t = i + 1

        if tau + h + 1 <= t <= n - 1:
            src = t - 1 - h - 1
            C[i] = rate_day[src] * S[src] * I[src] / pop
        elif t == n and t > tau + h:
            C[i] = C[i - 1]

        window = 0.0
        lo = t - tau + 1
        if lo < 1:
            lo = 1
        for k in range(lo, t + 1):
            window += C[k - 1]
        if t - tau >= 1:
            removed_cum += C[t - tau - 1]

        if t < tau:
            S[i] = S[i - 1]
            I[i] = window
            R[i] = 0.0
        elif t <= n - h - 2:
            s_new = S[i - 1] - C[i] - vacc[i]
            if demography:
                s_new += births * (1.0 - S[i - 1] / pop)
            if seirs:
                lag_day = t - waning_delay
                if lag_day >= 2:
                    conv = 0.0
                    for k in range(1, lag_day):
                        d = lag_day - k
                        if d - 1 < recovery_pmf.shape[0]:
                            conv += recovery_pmf[d - 1] * C[k - 1]
                    s_new += (1.0 - ifr_day[lag_day - 1]) * conv
            S[i] = s_new

            i_new = window
            if demography:
                i_new -= births * I[i - 1] / pop
            I[i] = i_new

            r_new = removed_cum + vacc[i]
            if demography:
                r_new -= births * R[i - 1] / pop
            R[i] = r_new
        else:
            S[i] = S[i - 1]
            I[i] = I[i - 1]
            R[i] = R[i - 1]

        if (not np.isfinite(C[i]) or not np.isfinite(S[i])
                or not np.isfinite(I[i]) or not np.isfinite(R[i])
                or C[i] < 0.0 or S[i] < 0.0 or S[i] > pop or I[i] < 0.0):
            return C, S, I, R, False

    return C, S, I, R, True


@njit(cache=True)
def negbin_logpmf_series(d, theta, psi):
    """Vectorized NB log-pmf in the mean/dispersion parameterization."""
    out = np.empty(d.shape[0])
    lgpsi = math.lgamma(psi)
    for i in range(d.shape[0]):
        th = theta[i]
        y = d[i]
        out[i] = (math.lgamma(y + psi) - lgpsi - math.lgamma(y + 1.0)
                  - psi * math.log1p(th / psi) + y * (math.log(th) - math.log(psi + th)))
    return out
