"""Convergence diagnostics: rank-based split-Rhat and autocorrelation ESS."""

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import ParameterError
from .sampling import ChainDraws


@dataclass
class DiagnosticsResult:
    """Per-parameter diagnostics; `undefined` marks constant-chain parameters
    whose Rhat/ESS carry NaN deliberately rather than by accident."""

    rhat: np.ndarray
    ess: np.ndarray
    undefined: np.ndarray
    names: tuple = ()

    def max_rhat(self) -> float:
        ok = ~self.undefined
        return float(np.max(self.rhat[ok])) if ok.any() else float("nan")

    def min_ess(self) -> float:
        ok = ~self.undefined
        return float(np.min(self.ess[ok])) if ok.any() else float("nan")


def _split_chains(x):
    """(m, M) -> (2m, M//2); drops the middle draw when M is odd."""
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def _rank_normalize(x):
    flat = x.ravel()
    ranks = sps.rankdata(flat)
    z = sps.norm.ppf((ranks - 0.375) / (flat.size + 0.25))
    return z.reshape(x.shape)


def _rhat_on(x):
    m, n = x.shape
    within = x.var(axis=1, ddof=1).mean()
    if within == 0.0:
        return float("nan")
    between = n * x.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def split_rhat(draws) -> float:
    """Rank-normalized split-Rhat of one parameter, draws shaped (chains, M)."""
    x = _split_chains(np.asarray(draws, dtype=float))
    if np.all(x == x.ravel()[0]):
        return float("nan")
    return _rhat_on(_rank_normalize(x))


def _autocov(y):
    n = y.size
    y = y - y.mean()
    size = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(y, size)
    return np.fft.irfft(f * np.conj(f))[:n].real / n


def ess(draws) -> float:
    """Effective sample size from split chains via Geyer's initial monotone
    positive sequence of paired autocorrelations."""
    x = _split_chains(np.asarray(draws, dtype=float))
    m, n = x.shape
    within = x.var(axis=1, ddof=1).mean()
    if within == 0.0:
        return float("nan")
    between = n * x.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * within + between / n

    acov = np.asarray([_autocov(x[c]) for c in range(m)])
    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    tau = 0.0
    prev_pair = np.inf
    for k in range(0, n - 1, 2):
        pair = rho[k] + (rho[k + 1] if k + 1 < n else 0.0)
        if pair <= 0.0:
            break
        pair = min(pair, prev_pair)  # enforce monotone decline
        tau += pair
        prev_pair = pair
    tau = max(2.0 * tau - 1.0, 1e-12)
    return float(m * n / tau)


def diagnostics(chains, names=()) -> DiagnosticsResult:
    """Split-Rhat and ESS per parameter across at least two equal-length chains."""
    if isinstance(chains, (list, tuple)) and chains \
            and isinstance(chains[0], ChainDraws):
        lengths = {c.n_draws for c in chains}
        if len(lengths) != 1:
            raise ParameterError("chains must have equal numbers of draws")
        stack = np.stack([c.unconstrained for c in chains])
    else:
        stack = np.asarray(chains, dtype=float)
    if stack.ndim != 3:
        raise ParameterError("expected draws shaped (chains, draws, params)")
    n_chains, n_draws, n_params = stack.shape
    if n_chains < 2:
        raise ParameterError("diagnostics need at least two chains")
    if n_draws < 4:
        raise ParameterError("diagnostics need at least four draws per chain")

    rhat = np.empty(n_params)
    ess_arr = np.empty(n_params)
    undefined = np.zeros(n_params, dtype=bool)
    for j in range(n_params):
        x = stack[:, :, j]
        rhat[j] = split_rhat(x)
        ess_arr[j] = ess(x)
        if np.isnan(rhat[j]) or np.isnan(ess_arr[j]):
            undefined[j] = True
    return DiagnosticsResult(rhat=rhat, ess=ess_arr, undefined=undefined,
                             names=tuple(names))
