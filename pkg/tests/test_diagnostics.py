import numpy as np
import pytest

from coulombgas.diagnostics import (
    ChainDiagnostics,
    autocovariance,
    effective_sample_size,
    integrated_autocorr_time,
    split_rhat,
)


def ar1(phi, n, chains, rng):
    x = np.empty((chains, n))
    x[:, 0] = rng.normal(size=chains) / np.sqrt(1 - phi**2)
    eps = rng.normal(size=(chains, n))
    for t in range(1, n):
        x[:, t] = phi * x[:, t - 1] + eps[:, t]
    return x


def test_autocovariance_matches_direct(rng):
    x = rng.normal(size=200)
    c = autocovariance(x)
    xc = x - x.mean()
    for t in (0, 1, 5):
        assert c[t] == pytest.approx(np.dot(xc[: 200 - t], xc[t:]) / 200, rel=1e-10)


def test_ar1_autocorr_time(rng):
    # tau = (1 + phi) / (2 (1 - phi)) in the 1/2 + sum convention
    phi = 0.8
    x = ar1(phi, 40_000, 1, rng)[0]
    assert integrated_autocorr_time(x) == pytest.approx((1 + phi) / (2 * (1 - phi)), rel=0.1)


def test_iid_ess(rng):
    x = rng.normal(size=(4, 5000))
    ess = effective_sample_size(x)
    assert 0.8 * 20000 <= ess <= 20000


def test_rhat_detects_shifted_chain(rng):
    x = rng.normal(size=(4, 1000))
    assert split_rhat(x) < 1.01
    x[0] += 3.0
    assert split_rhat(x) > 1.1


def test_chain_diagnostics(rng):
    d = ChainDiagnostics.from_traces({"a": rng.normal(size=(2, 500)), "b": ar1(0.5, 500, 2, rng)})
    assert d.converged()
    assert d.ess["a"] > d.ess["b"]
