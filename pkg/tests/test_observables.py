import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from coulombgas import Configuration
from coulombgas.observables import (
    DomainMismatchError,
    centered_sums,
    duality_pairing,
    euclidean_bump,
    exp_moment,
    l1_norm,
    l1_norm_direct,
    linear_statistic,
    make_test_function,
    mean_with_error,
    mu_v_weights,
    potential_field,
    tail_probability,
    torus_cosine,
    torus_lattice,
)


def test_cosine_properties():
    phi = torus_cosine((1, 2, 0))
    assert phi.laplacian_sup == pytest.approx(4 * math.pi**2 * 5)
    x = np.array([[0.1, 0.2, 0.3]])
    h = 1e-4
    fd = sum((phi(x + h * e) - 2 * phi(x) + phi(x - h * e)) / h**2 for e in np.eye(3))
    assert phi.laplacian(x)[0] == pytest.approx(fd[0], rel=1e-5)


def test_bump_mean_by_radial_quadrature(eq):
    phi = euclidean_bump(eq, 0.3)
    val = quad(lambda s: 4 * math.pi * s * s * (1 - s * s / 0.09) ** 3 * eq.density, 0, 0.3, epsabs=1e-14)[0]
    assert abs(phi.mean - val) < 1e-8


def test_bump_laplacian_fd(eq):
    phi = euclidean_bump(eq, 0.3)
    x = np.array([[0.05, -0.1, 0.07]])
    h = 1e-4
    fd = sum((phi(x + h * e) - 2 * phi(x) + phi(x - h * e)) / h**2 for e in np.eye(3))
    assert phi.laplacian(x)[0] == pytest.approx(fd[0], rel=1e-5)
    r = np.linspace(0, 0.3, 2001)[:, None] * np.array([[1.0, 0, 0]])
    assert np.max(np.abs(phi.laplacian(r))) <= phi.laplacian_sup + 1e-12


def test_bump_must_fit_inside(eq):
    with pytest.raises(ValueError):
        euclidean_bump(eq, 0.45)


def test_registry(eq):
    assert make_test_function("cos:1,0,0").name == "cos:1,0,0"
    assert make_test_function("bump:0.3", eq).domain == "euclidean"
    with pytest.raises(ValueError):
        make_test_function("sin:1")


def test_lattice_statistic_vanishes(kernel):
    # a cubic lattice integrates cos(2 pi x_1) exactly
    c = Configuration(torus_lattice(4), kernel)
    assert abs(linear_statistic(c, torus_cosine((1, 0, 0)))) < 1e-12


def test_centered_sums_shapes(eq, rng):
    phi = euclidean_bump(eq)
    pts = eq.sample(600, rng).reshape(20, 30, 3)
    s = centered_sums(phi, pts)
    assert s.shape == (20,)
    assert s[3] == pytest.approx(phi(pts[3]).sum() - 30 * phi.mean)


def test_domain_mismatch(kernel, eq, rng):
    c = Configuration(rng.random((4, 3)), kernel)
    with pytest.raises(DomainMismatchError):
        linear_statistic(c, euclidean_bump(eq))
    f = potential_field(c, 8)
    with pytest.raises(DomainMismatchError):
        duality_pairing(f, euclidean_bump(eq))


def test_torus_field_identities(kernel, rng):
    c = Configuration(rng.random((10, 3)), kernel)
    f = potential_field(c, 32)
    # mean zero, L1 identity, P >= -N m_pot
    assert abs(f.integral()) < 5e-3
    assert l1_norm(f) == pytest.approx(l1_norm_direct(f), abs=2 * abs(f.integral()) + 1e-12)
    assert f.values.min() >= -10 * kernel.m_pot
    # self-adjointness: <phi, mu_X> = -<Laplacian phi, P mu_X>
    phi = torus_cosine((1, 0, 0))
    assert duality_pairing(f, phi) == pytest.approx(-linear_statistic(c, phi), abs=0.02)


def test_torus_field_matches_direct_sum(kernel, rng):
    pos = rng.random((3, 3))
    c = Configuration(pos, kernel)
    f = potential_field(c, 4)
    direct = sum(kernel(f.centers - p) for p in pos)
    assert np.allclose(f.values, direct, atol=1e-12)


def test_euclidean_l1_identity(free_kernel, eq, rng):
    c = Configuration(eq.sample(4, rng), free_kernel, eq.potential)
    f = potential_field(c, 64, measure="mu_v", equilibrium=eq)
    zs = eq.zeta_statistic(c.positions)
    assert l1_norm(f, zs) == pytest.approx(l1_norm_direct(f), rel=1e-2)
    with pytest.raises(ValueError):
        l1_norm(f)


def test_mu_v_weights_sum_and_volume(eq):
    m = 40
    h = 2 * eq.radius / m
    a = -eq.radius + (np.arange(m) + 0.5) * h
    centers = np.stack(np.meshgrid(a, a, a, indexing="ij"), -1).reshape(-1, 3)
    w = mu_v_weights(centers, h, eq, subsample=6)
    assert w.sum() == pytest.approx(1.0)
    # second moment of the uniform ball: 3 R^2 / 5
    assert np.dot(w, np.sum(centers**2, axis=1)) == pytest.approx(0.6 * eq.radius**2, rel=1e-2)


def test_exp_moment_gaussian(rng):
    x = rng.normal(size=200_000)
    est = exp_moment(x, 0.5)
    assert est.value == pytest.approx(math.exp(0.125), abs=4 * est.stderr + 1e-3)
    assert est.log_value == pytest.approx(0.125, abs=0.01)


def test_exp_moment_log_domain():
    est = exp_moment(np.array([0.0, 1000.0] * 60), 1.0)
    assert est.log_domain and math.isinf(est.value)
    assert est.log_value == pytest.approx(1000 - math.log(2), abs=1e-9)


def test_exp_moment_needs_samples():
    with pytest.raises(ValueError):
        exp_moment(np.zeros(5), 1.0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=100, max_size=300), st.floats(0.0, 2.0))
def test_exp_moment_is_at_least_jensen(values, rate):
    est = exp_moment(np.array(values), rate)
    assert est.log_value >= rate * np.mean(values) - 1e-9


def test_mean_with_error(rng):
    m, se = mean_with_error(rng.normal(size=10_000))
    assert abs(m) < 4 * se and 0.005 < se < 0.02


def test_tail_probability_warns(rng):
    with pytest.warns(RuntimeWarning):
        tail_probability(rng.normal(size=100), 10.0)
    p, se = tail_probability(rng.normal(size=20_000), 1.0)
    assert p == pytest.approx(0.3173, abs=4 * se)
