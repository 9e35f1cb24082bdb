import math

import numpy as np
import pytest

from coulombgas import Configuration
from coulombgas.sampler import (
    TRACE_SCHEMA,
    ChainState,
    SamplerError,
    heatbath_resample,
    metropolis_sweep,
    random_configuration,
    run_chain,
)


def test_energy_cache_tracks_moves(kernel, rng):
    c = Configuration(rng.random((16, 3)), kernel)
    ch = ChainState.create(c, beta=1.0, seed=1)
    metropolis_sweep(ch, 200)
    cached = ch.config.energy
    assert ch.config.refresh() == pytest.approx(cached, abs=1e-10 * max(1, abs(cached)))


def test_beta_validation(kernel, rng):
    c = Configuration(rng.random((4, 3)), kernel)
    with pytest.raises(ValueError):
        ChainState.create(c, beta=-1.0)
    with pytest.raises(ValueError):
        ChainState.create(c, beta=math.nan)


def test_uniform_proposal_only_on_torus(free_kernel, eq, rng):
    c = Configuration(eq.sample(4, rng), free_kernel, eq.potential)
    with pytest.raises(ValueError):
        ChainState.create(c, 1.0, proposal="uniform")


def test_beta_zero_accepts_everything(kernel, rng):
    c = Configuration(rng.random((8, 3)), kernel)
    ch = ChainState.create(c, 0.0, seed=2)
    metropolis_sweep(ch, 10)
    assert ch.acceptance_rate == 1.0


def test_checkpoint_restore_is_exact(kernel, rng):
    c = Configuration(rng.random((8, 3)), kernel)
    a = ChainState.create(c, 1.0, seed=5, chain_id=3)
    metropolis_sweep(a, 20)
    snap = a.checkpoint()
    b = ChainState.restore(snap, kernel)
    metropolis_sweep(a, 30)
    metropolis_sweep(b, 30)
    assert np.array_equal(a.config.positions, b.config.positions)
    assert a.sweep == b.sweep


def test_chains_are_reproducible_and_independent(kernel, rng):
    c = Configuration(rng.random((8, 3)), kernel)
    r1 = run_chain(c, 1.0, 60, 10, seed=9, chain_id=0)
    r2 = run_chain(c, 1.0, 60, 10, seed=9, chain_id=0)
    r3 = run_chain(c, 1.0, 60, 10, seed=9, chain_id=1)
    assert r1.trace_csv() == r2.trace_csv()
    assert not np.array_equal(r1.energy, r3.energy)


def test_trace_csv_schema(kernel, rng):
    c = Configuration(rng.random((4, 3)), kernel)
    res = run_chain(c, 1.0, 30, 10, thin=2, observables={"x0": lambda conf: conf.positions[0, 0]})
    lines = res.trace_csv().splitlines()
    assert lines[0] == f"schema,{TRACE_SCHEMA}"
    assert lines[1] == "chain_id,sweep,H,x0,acceptance"
    assert len(lines) == 2 + 10
    row = lines[2].split(",")
    assert float(row[2]) == res.energy[0]


def test_tuning_moves_acceptance_toward_target(free_kernel, eq, rng):
    c = Configuration(eq.sample(32, rng), free_kernel, eq.potential)
    res = run_chain(c, 1.0, 1500, 1000, seed=3)
    assert 0.2 < res.acceptance < 0.5


def test_guard_aborts(kernel, rng):
    c = Configuration(rng.random((4, 3)), kernel)

    def guard(conf, sweep):
        if sweep > 5:
            raise RuntimeError("stop")

    with pytest.raises(RuntimeError):
        run_chain(c, 1.0, 20, 0, guard=guard)


def test_bad_run_arguments(kernel, rng):
    c = Configuration(rng.random((4, 3)), kernel)
    with pytest.raises(ValueError):
        run_chain(c, 1.0, 10, 20)


def test_heatbath_two_particles_matches_conditional(kernel):
    """Displacement histogram of heat-bath draws versus exp(-beta g) on 4^3 bins."""
    beta = 2.0
    c = Configuration(np.array([[0.1, 0.2, 0.3], [0.6, 0.7, 0.8]]), kernel)
    ch = ChainState.create(c, beta, seed=1)
    d = np.concatenate([heatbath_resample(ch, j % 2, grid=16, draws=5000) - ch.config.positions[1 - j % 2]
                        for j in range(4)])
    m = 32
    a = (np.arange(m) + 0.5) / m
    g = np.stack(np.meshgrid(a, a, a, indexing="ij"), -1).reshape(-1, 3)
    dens = np.exp(-beta * kernel(g)).reshape(m, m, m)
    orc = dens.reshape(4, 8, 4, 8, 4, 8).sum(axis=(1, 3, 5))
    orc /= orc.sum()
    idx = np.floor(np.mod(d, 1.0) * 4).astype(int) % 4
    h = np.zeros((4, 4, 4))
    np.add.at(h, (idx[:, 0], idx[:, 1], idx[:, 2]), 1)
    assert 0.5 * np.abs(h / h.sum() - orc).sum() < 0.03


def test_heatbath_euclidean_rejected(free_kernel, eq, rng):
    c = Configuration(eq.sample(3, rng), free_kernel, eq.potential)
    with pytest.raises(SamplerError):
        heatbath_resample(ChainState.create(c, 1.0), 0)


def test_random_configuration(kernel, free_kernel, rng):
    t = random_configuration(5, kernel, rng)
    assert t.domain == "torus" and t.n == 5
