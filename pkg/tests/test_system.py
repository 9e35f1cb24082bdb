import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coulombgas import ConfiningPotential, Configuration
from coulombgas.system import CoincidentPointsError


def direct_torus(pos, k):
    n = len(pos)
    return sum(float(k(pos[i] - pos[j])) for i in range(n) for j in range(i + 1, n))


def direct_free(pos, pot):
    n = len(pos)
    h = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            h += 1.0 / (4 * np.pi * np.linalg.norm(pos[i] - pos[j]))
    return h + n * sum(pot(p) for p in pos)


def test_torus_energy_matches_double_sum(kernel, rng):
    pos = rng.random((12, 3))
    c = Configuration(pos, kernel)
    assert c.energy == pytest.approx(direct_torus(pos, kernel), rel=1e-12)


def test_free_energy_matches_double_sum(free_kernel, eq, rng):
    pos = eq.sample(10, rng)
    c = Configuration(pos, free_kernel, eq.potential)
    assert c.energy == pytest.approx(direct_free(pos, eq.potential), rel=1e-12)


def test_local_energy_identities(kernel, free_kernel, eq, rng):
    c = Configuration(rng.random((9, 3)), kernel)
    assert c.energy_from_local() == pytest.approx(c.energy, rel=1e-12)
    e = Configuration(eq.sample(9, rng), free_kernel, eq.potential)
    assert e.energy_from_local() == pytest.approx(e.energy, rel=1e-12)
    # H = l_j + H_{N-1}(X without j)
    j = 4
    rest = Configuration(np.delete(c.positions, j, 0), kernel)
    assert c.local_energy(j) + rest.energy == pytest.approx(c.energy, rel=1e-12)


def test_euclidean_local_energy_definition(free_kernel, eq, rng):
    pos = eq.sample(6, rng)
    c = Configuration(pos, free_kernel, eq.potential)
    v = eq.potential(pos)
    j = 2
    g = sum(1.0 / (4 * np.pi * np.linalg.norm(pos[j] - pos[k])) for k in range(6) if k != j)
    expect = g + (v.sum() - v[j]) + 5 * v[j]
    assert c.local_energy(j) == pytest.approx(expect, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 7), st.tuples(*[st.floats(-2, 2, allow_nan=False)] * 3), st.integers(0, 2**31))
def test_delta_energy_matches_recompute(j, x, seed):
    from coulombgas import TorusKernel

    k = _k()
    pos = np.random.default_rng(seed).random((8, 3))
    c = Configuration(pos, k)
    x = np.array(x)
    d = np.mod(pos - x, 1.0)
    if np.min(np.linalg.norm(np.minimum(d, 1 - d), axis=1)) < 1e-3:
        return
    delta = c.delta_energy_move(j, x)
    new = pos.copy()
    new[j] = x
    assert delta == pytest.approx(Configuration(new, k).energy - c.energy, abs=1e-10 * max(1, abs(c.energy)))
    c.apply_move(j, x)
    assert c.energy == pytest.approx(Configuration(new, k).energy, abs=1e-10)
    assert isinstance(k, TorusKernel)


_KS = []


def _k():
    from coulombgas import TorusKernel

    if not _KS:
        _KS.append(TorusKernel(3))
    return _KS[0]


def test_coincident_points_rejected(kernel):
    with pytest.raises(CoincidentPointsError):
        Configuration(np.array([[0.25, 0.5, 0.75], [1.25, 0.5, 0.75]]), kernel)


def test_bad_index(kernel, rng):
    c = Configuration(rng.random((3, 3)), kernel)
    with pytest.raises(IndexError):
        c.local_energy(3)


def test_snapshot_roundtrip(kernel, rng):
    c = Configuration(rng.random((5, 3)), kernel)
    text = c.to_csv(seed=7, sweep=11)
    assert text.splitlines()[0].startswith("schema,")
    pos, meta = Configuration.read_csv(text)
    assert np.array_equal(pos, c.positions)
    assert meta["seed"] == 7 and meta["sweep"] == 11 and meta["domain"] == "torus"


def test_confining_potentials():
    q = ConfiningPotential("quadratic", shift=-0.1)
    assert q(np.array([1.0, 0.0, 0.0])) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        ConfiningPotential("cubic")
