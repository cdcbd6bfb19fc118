"""Second-stage analyses that use recorded cases retrospectively.

Recorded cases never enter the stage-1 posterior; these helpers read draws
(or quantities derived from them) and produce summaries such as the observed
proportion of infections. Everything is pure, so running stage 2 cannot
change stage-1 results byte for byte.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


def loess_smooth(x, y, span=0.3) -> np.ndarray:
    """Degree-1 local regression with tricube weights.

    The bandwidth at each point is the distance to its ceil(span * n)-th
    nearest neighbor. NaN observations are ignored for fitting but still get
    a smoothed value. Returns the fitted curve at every x.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ParameterError("x and y must be equally sized 1-d arrays")
    if not 0.0 < span <= 1.0:
        raise ParameterError("span must lie in (0, 1]")
    ok = np.isfinite(y)
    if ok.sum() < 2:
        raise ParameterError("need at least two finite observations to smooth")
    xs, ys = x[ok], y[ok]
    q = max(2, int(np.ceil(span * xs.size)))
    q = min(q, xs.size)

    out = np.empty(x.size)
    for i, x0 in enumerate(x):
        d = np.abs(xs - x0)
        bandwidth = np.partition(d, q - 1)[q - 1]
        if bandwidth == 0:
            out[i] = ys[d == 0].mean()
            continue
        u = np.clip(d / bandwidth, 0.0, 1.0)
        w = (1.0 - u ** 3) ** 3
        # centered design: the intercept is the fit at x0
        t = xs - x0
        sw = w.sum()
        st = w @ t
        stt = w @ (t * t)
        sy = w @ ys
        sty = w @ (t * ys)
        det = sw * stt - st * st
        if det <= 0:
            out[i] = sy / sw
        else:
            out[i] = (stt * sy - st * sty) / det
    return out


@dataclass
class ProportionResult:
    """Per-draw observed proportions with their smoothed median curve."""

    draws: np.ndarray       # (M, n), NaN where a draw was excluded
    median: np.ndarray      # (n,)
    smoothed: np.ndarray    # (n,)
    excluded: np.ndarray    # (n,) count of zero-infection draws per day


def observed_proportion(cases, case_draws, span=0.3) -> ProportionResult:
    """Proportion of infections that were recorded, day by day.

    `cases` are the recorded counts; `case_draws` are posterior draws of the
    latent total infections, one row per draw. Draws with zero infections on
    a day are excluded from that day's ratio and counted in `excluded`. The
    summary curve smooths the per-day median by local regression.
    """
    cases = np.asarray(cases, dtype=float)
    case_draws = np.asarray(case_draws, dtype=float)
    if case_draws.ndim != 2 or case_draws.shape[1] != cases.size:
        raise ParameterError("case draws must be (draws, days) aligned with cases")
    if np.any(cases < 0):
        raise ParameterError("recorded cases cannot be negative")

    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = cases[None, :] / case_draws
    zero = case_draws == 0
    ratios[zero] = np.nan
    excluded = zero.sum(axis=0)

    all_gone = excluded == case_draws.shape[0]
    median = np.empty(cases.size)
    median[:] = np.nan
    if not all_gone.all():
        median[~all_gone] = np.nanmedian(ratios[:, ~all_gone], axis=0)
    days = np.arange(1.0, cases.size + 1.0)
    smoothed = loess_smooth(days, median, span=span)
    return ProportionResult(draws=ratios, median=median, smoothed=smoothed,
                            excluded=excluded)
