import numpy as np
import pytest

from coulombgas import Configuration
from coulombgas.groundstate import (
    audit_certificate,
    certify_euclidean_lower_bound,
    certify_lower_bound,
    local_descent,
    minimize_energy,
    regularized_energy,
    regularized_ground_state,
    smearing_radius,
)


def test_two_particles_optimum(kernel):
    gs = minimize_energy(2, kernel, seeds=(0,), sweeps=300)
    assert gs.energy == pytest.approx(-kernel.m_pot, abs=1e-9)
    d = np.mod(gs.config.positions[0] - gs.config.positions[1], 1.0)
    assert np.allclose(d, 0.5, atol=1e-4)


def test_smearing_radius_clamped():
    assert smearing_radius(8) == 0.45
    assert smearing_radius(64) == pytest.approx(0.25)


@pytest.mark.parametrize("n", [2, 8, 16])
def test_certificate_below_optimum(kernel, n):
    cert = certify_lower_bound(n, kernel)
    gs = minimize_energy(n, kernel, seeds=(0, 1), sweeps=800)
    assert cert.bound <= gs.energy
    assert cert.c_sub >= 0.0


def test_certificate_audit(kernel, rng):
    cert = certify_lower_bound(12, kernel)
    c = Configuration(rng.random((12, 3)), kernel)
    res = audit_certificate(c, cert)
    assert res["positivity_ok"] and res["pairwise_ok"] and res["bound_ok"]


def test_lattice_energy_lower_bounded(kernel):
    from coulombgas.observables import torus_lattice

    c = Configuration(torus_lattice(3), kernel)
    assert c.energy >= certify_lower_bound(27, kernel).bound


def test_local_descent_does_not_increase(kernel, rng):
    c = Configuration(rng.random((10, 3)), kernel)
    e0 = c.energy
    local_descent(c, max_passes=200)
    assert c.energy <= e0


def test_euclidean_certificate_tight_at_one(eq, free_kernel):
    cert = certify_euclidean_lower_bound(1, eq)
    # single particle: min over x of N V(x) - N zeta(x)
    gs = regularized_ground_state(1, eq, seeds=(0,), sweeps=200)
    assert cert.bound <= gs.energy + 1e-9
    assert gs.energy == pytest.approx(cert.bound, abs=1e-6)


def test_euclidean_regularized_ground_state(eq):
    gs = regularized_ground_state(16, eq, seeds=(0,), sweeps=600)
    cert = certify_euclidean_lower_bound(16, eq)
    assert cert.bound <= gs.energy
    r = np.linalg.norm(gs.config.positions, axis=1)
    assert r.max() <= eq.radius + 1e-3
    assert regularized_energy(gs.config, eq) == pytest.approx(gs.energy, abs=1e-9)
