"""MCMC convergence diagnostics.

Integrated autocorrelation times follow Sokal's convention
``tau = 1/2 + sum_{t>=1} rho_t`` (so i.i.d. draws give 1/2 and
``ESS = n / (2 tau)``), truncated with Geyer's initial monotone sequence.
The multi-chain ESS and split R-hat follow Gelman et al., BDA3 ch. 11.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def autocovariance(x):
    """Biased autocovariance of a 1-D series at all lags, via FFT."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    y = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n] / n
    return acov


def _geyer_truncate(rho):
    """Sum of autocorrelations using Geyer's initial monotone sequence."""
    n = len(rho)
    pairs = []
    t = 0
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p <= 0:
            break
        pairs.append(p)
        t += 2
    if not pairs:
        return 0.0
    pairs = np.minimum.accumulate(np.array(pairs))
    # sum_{t>=0} rho_t over the retained pairs, minus rho_0 = 1
    return pairs.sum() - 1.0


def _chains(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    return x


def integrated_autocorr_time(x):
    """Integrated autocorrelation time (Sokal convention) of one or more chains."""
    x = _chains(x)
    m, n = x.shape
    if n < 4:
        raise ValueError("need at least 4 samples per chain")
    ess = effective_sample_size(x)
    return m * n / (2.0 * ess)


def effective_sample_size(x):
    """Multi-chain effective sample size, capped at the number of samples."""
    x = _chains(x)
    m, n = x.shape
    if n < 4:
        raise ValueError("need at least 4 samples per chain")
    acov = np.array([autocovariance(c) for c in x])
    chain_mean = x.mean(axis=1)
    within = acov[:, 0].mean() * n / (n - 1.0)
    var_plus = within * (n - 1.0) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if var_plus <= 0.0:
        return float(m * n)
    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    tail = _geyer_truncate(rho)
    tau = max(0.5 + tail, 0.5)
    ess = m * n / (2.0 * tau)
    return float(min(ess, m * n))


def split_rhat(x):
    """Split-chain potential scale reduction factor (needs >= 2 chains' worth)."""
    x = _chains(x)
    m, n = x.shape
    half = n // 2
    if half < 2:
        raise ValueError("chains too short for split R-hat")
    parts = np.concatenate([x[:, :half], x[:, n - half :]], axis=0)
    means = parts.mean(axis=1)
    within = parts.var(axis=1, ddof=1).mean()
    between = half * means.var(ddof=1)
    if within == 0.0:
        return 1.0 if between == 0.0 else np.inf
    var_plus = (half - 1.0) / half * within + between / half
    return float(np.sqrt(var_plus / within))


@dataclass
class ChainDiagnostics:
    """Per-observable convergence summary over one or more chains."""

    n_samples: int
    n_chains: int
    tau: dict = field(default_factory=dict)
    ess: dict = field(default_factory=dict)
    rhat: dict = field(default_factory=dict)

    @classmethod
    def from_traces(cls, traces):
        """``traces`` maps observable name to an array of shape (chains, samples)."""
        names = list(traces)
        arr0 = _chains(traces[names[0]]) if names else np.zeros((1, 0))
        diag = cls(n_samples=int(arr0.size), n_chains=int(arr0.shape[0]))
        for name in names:
            x = _chains(traces[name])
            if x.shape[1] < 4:
                continue
            ess = effective_sample_size(x)
            diag.ess[name] = ess
            diag.tau[name] = x.size / (2.0 * ess)
            diag.rhat[name] = split_rhat(x)
        return diag

    def converged(self, threshold=1.1, names=None):
        names = names or list(self.rhat)
        return all(self.rhat.get(k, np.inf) <= threshold for k in names)
