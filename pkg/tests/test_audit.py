import numpy as np
import pytest

from coulombgas import Configuration
from coulombgas.audit import EUCLIDEAN_COVERAGE, TORUS_COVERAGE, Check, euclidean_audit, grid_calibration, torus_audit
from coulombgas.observables import euclidean_bump, torus_cosine


def test_check_pass_rule():
    assert Check("a", "", -0.3, 0.05, 0.05).passed
    assert not Check("a", "", -0.31, 0.05, 0.05).passed
    assert Check("a", "", -5.0, informational=True).passed
    assert Check("a", "", 1.0, 0.1, 0.1).strict_margin == pytest.approx(0.4)


def test_torus_audit_short(kernel, rng):
    c = Configuration(rng.random((6, 3)), kernel)
    res = torus_audit(c, 2.0, 120, burn_in=20, seed=1, m=12, refine_every=5)
    assert res.passed, [r for r in res.table() if not r["passed"]]
    assert all(res.covered.values())
    assert set(TORUS_COVERAGE) <= {c.name for c in res.checks}


def test_euclidean_audit_short(free_kernel, eq, rng):
    c = Configuration(eq.sample(5, rng), free_kernel, eq.potential)
    res = euclidean_audit(c, 1.0, 80, eq, burn_in=20, seed=1, m=16, refine_every=5)
    assert res.passed, [r for r in res.table() if not r["passed"]]
    assert set(EUCLIDEAN_COVERAGE) <= {c.name for c in res.checks}


def test_euclidean_audit_beta_floor(free_kernel, eq, rng):
    c = Configuration(eq.sample(5, rng), free_kernel, eq.potential)
    with pytest.raises(ValueError):
        euclidean_audit(c, 0.2, 10, eq)


def test_calibration_converges_quadratically(kernel):
    c = Configuration(np.array([[0.1, 0.2, 0.3]]), kernel)
    phi = torus_cosine((1, 0, 0))
    e16 = grid_calibration(c, 16, phi, offsets=64)["pair"]
    e32 = grid_calibration(c, 32, phi, offsets=64)["pair"]
    assert 2.5 < e16 / e32 < 6.0


def test_euclidean_calibration(free_kernel, eq):
    c = Configuration(np.zeros((1, 3)), free_kernel, eq.potential)
    e = grid_calibration(c, 24, euclidean_bump(eq), eq, offsets=32)
    assert e["pmu"] < 1e-3 and e["pair"] < 0.05
