"""Markov chain samplers for the Gibbs measure exp(-beta H) / Z.

Single-particle Metropolis sweeps run in numba.  All randomness is drawn up
front from a :class:`numpy.random.Generator` seeded by ``SeedSequence(seed,
spawn_key=(chain_id,))``, so chains are reproducible bit for bit.  The
proposal scale is adapted toward a 35% acceptance rate during burn-in only
and frozen afterwards, which keeps the production chain a reversible
Metropolis chain.

For the torus the heat-bath move resamples one particle exactly from its
conditional density ``exp(-beta P_hat_j(x))`` discretized on an ``M^3`` grid
of cell centres, with a uniform jitter inside the chosen cell.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .diagnostics import ChainDiagnostics
from .kernel import TorusKernel, torus_green
from .system import Configuration, _confine, _free_green

TARGET_ACCEPTANCE = 0.35
TRACE_SCHEMA = "coulombgas-trace/1"
_SIGMA_BOUNDS = {"torus": (1e-4, 1.0), "euclidean": (1e-4, 10.0)}


class SamplerError(RuntimeError):
    pass


# -- numba kernels -------------------------------------------------------------


@njit(cache=True)
def _sweeps_torus(pos, pair, inter, table, m, beta, sigma, steps, unif, independent):
    """Systematic-scan Metropolis over all particles, ``steps.shape[0]`` times.

    Returns (accepted, delta_H).  ``independent`` switches to uniform
    independence proposals (``steps`` then holds the proposed points).
    """
    n_sweeps = steps.shape[0]
    n = pos.shape[0]
    row = np.empty(n)
    accepted = 0
    dh = 0.0
    for s in range(n_sweeps):
        for j in range(n):
            if independent:
                x0 = steps[s, j, 0]
                x1 = steps[s, j, 1]
                x2 = steps[s, j, 2]
            else:
                x0 = pos[j, 0] + sigma * steps[s, j, 0]
                x1 = pos[j, 1] + sigma * steps[s, j, 1]
                x2 = pos[j, 2] + sigma * steps[s, j, 2]
                x0 -= math.floor(x0)
                x1 -= math.floor(x1)
                x2 -= math.floor(x2)
            new = 0.0
            ok = True
            for k in range(n):
                if k == j:
                    row[k] = 0.0
                    continue
                e = torus_green(x0 - pos[k, 0], x1 - pos[k, 1], x2 - pos[k, 2], table, m)
                if not math.isfinite(e):
                    ok = False
                    break
                row[k] = e
                new += e
            if not ok:
                continue
            delta = new - inter[j]
            if delta <= 0.0 or unif[s, j] < math.exp(-beta * delta):
                for k in range(n):
                    if k != j:
                        inter[k] += row[k] - pair[j, k]
                        pair[j, k] = row[k]
                        pair[k, j] = row[k]
                inter[j] = new
                pos[j, 0] = x0
                pos[j, 1] = x1
                pos[j, 2] = x2
                accepted += 1
                dh += delta
    return accepted, dh


@njit(cache=True)
def _sweeps_free(pos, pair, inter, conf, kappa, code, params, beta, sigma, steps, unif):
    n_sweeps = steps.shape[0]
    n = pos.shape[0]
    row = np.empty(n)
    accepted = 0
    dh = 0.0
    for s in range(n_sweeps):
        for j in range(n):
            x0 = pos[j, 0] + sigma * steps[s, j, 0]
            x1 = pos[j, 1] + sigma * steps[s, j, 1]
            x2 = pos[j, 2] + sigma * steps[s, j, 2]
            new = 0.0
            ok = True
            for k in range(n):
                if k == j:
                    row[k] = 0.0
                    continue
                e = _free_green(x0 - pos[k, 0], x1 - pos[k, 1], x2 - pos[k, 2], kappa)
                if not math.isfinite(e):
                    ok = False
                    break
                row[k] = e
                new += e
            if not ok:
                continue
            v = _confine(x0, x1, x2, code, params)
            delta = new - inter[j] + n * (v - conf[j])
            if delta <= 0.0 or unif[s, j] < math.exp(-beta * delta):
                for k in range(n):
                    if k != j:
                        inter[k] += row[k] - pair[j, k]
                        pair[j, k] = row[k]
                        pair[k, j] = row[k]
                inter[j] = new
                conf[j] = v
                pos[j, 0] = x0
                pos[j, 1] = x1
                pos[j, 2] = x2
                accepted += 1
                dh += delta
    return accepted, dh


@njit(cache=True)
def conditional_field(pos, j, table, m, grid):
    """P_hat_j at the centres of a ``grid^3`` cell partition of the torus."""
    n = pos.shape[0]
    out = np.zeros((grid, grid, grid))
    h = 1.0 / grid
    for a in range(grid):
        ca = (a + 0.5) * h
        for b in range(grid):
            cb = (b + 0.5) * h
            for c in range(grid):
                cc = (c + 0.5) * h
                acc = 0.0
                for k in range(n):
                    if k != j:
                        acc += torus_green(ca - pos[k, 0], cb - pos[k, 1], cc - pos[k, 2], table, m)
                out[a, b, c] = acc
    return out


@njit(cache=True)
def _heatbath_draws(pos, j, table, m, grid, beta, unif, jitter):
    """Resample particle j ``len(unif)`` times from its conditional law.

    The other particles stay fixed, so the field is computed once; every
    row of the returned array is an independent draw of x_j.
    """
    field = conditional_field(pos, j, table, m, grid).ravel()
    fmin = np.inf
    for i in range(field.size):
        if field[i] < fmin:
            fmin = field[i]
    cdf = np.empty(field.size)
    acc = 0.0
    for i in range(field.size):
        acc += math.exp(-beta * (field[i] - fmin))
        cdf[i] = acc
    out = np.empty((unif.shape[0], 3))
    h = 1.0 / grid
    for t in range(unif.shape[0]):
        idx = np.searchsorted(cdf, unif[t] * acc)
        if idx >= field.size:
            idx = field.size - 1
        a = idx // (grid * grid)
        b = (idx // grid) % grid
        c = idx % grid
        out[t, 0] = (a + jitter[t, 0]) * h
        out[t, 1] = (b + jitter[t, 1]) * h
        out[t, 2] = (c + jitter[t, 2]) * h
    return out


# -- chain state ---------------------------------------------------------------------


def chain_rng(seed, chain_id=0):
    """Independent, reproducible generator for chain ``chain_id``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(chain_id),))))


@dataclass
class ChainState:
    """Mutable state of one Markov chain.

    Attributes
    ----------
    config : Configuration
        Current configuration with cached energies.
    beta : float
        Inverse temperature (>= 0).
    sigma : float
        Proposal standard deviation per coordinate.
    proposal : str
        ``"gaussian"`` (random walk) or, on the torus, ``"uniform"``
        (independence proposal).
    """

    config: Configuration
    beta: float
    rng: np.random.Generator
    sigma: float
    proposal: str = "gaussian"
    seed: int = 0
    chain_id: int = 0
    sweep: int = 0
    proposed: int = 0
    accepted: int = 0
    tuning: bool = False

    @classmethod
    def create(cls, config, beta, seed=0, chain_id=0, sigma=None, proposal="gaussian"):
        if not beta >= 0.0 or not math.isfinite(beta):
            raise ValueError(f"beta must be finite and nonnegative, got {beta}")
        if proposal not in ("gaussian", "uniform"):
            raise ValueError(f"unknown proposal {proposal!r}")
        if proposal == "uniform" and config.domain != "torus":
            raise ValueError("uniform proposals need a bounded domain")
        if sigma is None:
            # typical interparticle spacing
            scale = 1.0 if config.domain == "torus" else 0.86
            sigma = 0.5 * scale * config.n ** (-1.0 / 3.0)
        return cls(config=config, beta=float(beta), rng=chain_rng(seed, chain_id), sigma=float(sigma),
                   proposal=proposal, seed=int(seed), chain_id=int(chain_id))

    @property
    def acceptance_rate(self):
        return self.accepted / self.proposed if self.proposed else 0.0

    def reset_counters(self):
        self.proposed = 0
        self.accepted = 0

    def checkpoint(self):
        """Plain-data snapshot from which :meth:`restore` resumes exactly."""
        return {
            "positions": self.config.positions.copy(),
            "beta": self.beta,
            "sigma": self.sigma,
            "proposal": self.proposal,
            "seed": self.seed,
            "chain_id": self.chain_id,
            "sweep": self.sweep,
            "proposed": self.proposed,
            "accepted": self.accepted,
            "rng_state": copy.deepcopy(self.rng.bit_generator.state),
        }

    @classmethod
    def restore(cls, snapshot, kernel, potential=None):
        config = Configuration(snapshot["positions"], kernel, potential)
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = copy.deepcopy(snapshot["rng_state"])
        return cls(config=config, beta=snapshot["beta"], rng=rng, sigma=snapshot["sigma"],
                   proposal=snapshot["proposal"], seed=snapshot["seed"], chain_id=snapshot["chain_id"],
                   sweep=snapshot["sweep"], proposed=snapshot["proposed"], accepted=snapshot["accepted"])


def metropolis_sweep(chain, n_sweeps=1):
    """Run ``n_sweeps`` systematic-scan Metropolis sweeps; returns accepted moves."""
    cfg = chain.config
    n = cfg.n
    if n_sweeps <= 0:
        return 0
    independent = chain.proposal == "uniform"
    if independent:
        steps = chain.rng.random((n_sweeps, n, 3))
    else:
        steps = chain.rng.standard_normal((n_sweeps, n, 3))
    unif = chain.rng.random((n_sweeps, n))
    if cfg.domain == "torus":
        k = cfg.kernel
        acc, dh = _sweeps_torus(cfg.positions, cfg.pair, cfg.interaction, k.table, k.table_size,
                                chain.beta, chain.sigma, steps, unif, independent)
    else:
        pot = cfg.potential
        acc, dh = _sweeps_free(cfg.positions, cfg.pair, cfg.interaction, cfg.confinement, cfg.kernel.kappa,
                               pot.code, pot.params(), chain.beta, chain.sigma, steps, unif)
    cfg.energy += dh
    chain.sweep += n_sweeps
    chain.proposed += n_sweeps * n
    chain.accepted += acc
    return acc


def tune_sigma(chain, rate, step):
    """Robbins-Monro update of log sigma toward the target acceptance."""
    lo, hi = _SIGMA_BOUNDS[chain.config.domain]
    chain.sigma = float(np.clip(chain.sigma * math.exp(step * (rate - TARGET_ACCEPTANCE)), lo, hi))


def heatbath_resample(chain, j, grid=24, draws=1):
    """Exact conditional resampling of particle j on a ``grid^3`` discretization.

    Returns the array of ``draws`` sampled positions; the configuration is
    left at the last one.
    """
    cfg = chain.config
    if cfg.domain != "torus":
        raise SamplerError("heat-bath moves are implemented for the torus only")
    cfg._check_index(j)
    unif = chain.rng.random(draws)
    jitter = chain.rng.random((draws, 3))
    k = cfg.kernel
    pts = _heatbath_draws(cfg.positions, j, k.table, k.table_size, int(grid), chain.beta, unif, jitter)
    cfg.apply_move(j, pts[-1])
    return pts


# -- driver --------------------------------------------------------------------------


@dataclass
class ChainResult:
    """Trace and diagnostics of one chain."""

    sweeps: np.ndarray
    energy: np.ndarray
    observables: dict
    acceptance: float
    sigma: float
    chain: ChainState
    diagnostics: ChainDiagnostics = None
    max_drift: float = 0.0
    snapshots: list = field(default_factory=list)
    acceptance_trace: np.ndarray = None

    def trace_csv(self, header=True):
        """Trace as CSV text with a schema line; floats in round-trip precision.

        Columns: chain_id, sweep, H, one per observable, acceptance rate.
        """
        names = list(self.observables)
        lines = [f"schema,{TRACE_SCHEMA}", ",".join(["chain_id", "sweep", "H"] + names + ["acceptance"])] if header else []
        cid = str(self.chain.chain_id)
        for i, s in enumerate(self.sweeps):
            vals = [repr(float(self.energy[i]))] + [repr(float(self.observables[k][i])) for k in names]
            vals.append(repr(float(self.acceptance_trace[i])))
            lines.append(",".join([cid, str(int(s))] + vals))
        return "\n".join(lines) + "\n"


def run_chain(config, beta, sweeps, burn_in=0, thin=1, seed=0, chain_id=0, observables=None,
              sigma=None, proposal="gaussian", tune=True, tune_block=10, refresh_every=1000,
              snapshot_every=0, drift_tol=1e-8, guard=None):
    """Run one chain and record a trace.

    Parameters
    ----------
    config : Configuration
        Initial configuration; it is copied, not modified.
    beta : float
        Inverse temperature.
    sweeps : int
        Total number of sweeps, including burn-in.
    burn_in : int
        Sweeps discarded (and used for step-size tuning).
    thin : int
        Record every ``thin``-th sweep after burn-in.
    observables : dict, optional
        Mapping name -> callable(Configuration) -> float.
    refresh_every : int
        Recompute all caches from scratch every this many sweeps and check
        that the accumulated energy drifted less than ``drift_tol`` (relative).
    guard : callable, optional
        Called as ``guard(config, sweep)`` on every recorded sweep; raise to
        abort the chain.
    """
    if thin < 1 or sweeps < burn_in or burn_in < 0:
        raise ValueError("need thin >= 1 and 0 <= burn_in <= sweeps")
    observables = dict(observables or {})
    chain = ChainState.create(config.copy(), beta, seed, chain_id, sigma, proposal)
    max_drift = 0.0

    def refresh():
        nonlocal max_drift
        before = chain.config.energy
        after = chain.config.refresh()
        drift = abs(after - before) / max(1.0, abs(after))
        max_drift = max(max_drift, drift)
        if drift > drift_tol:
            raise SamplerError(f"incremental energy drifted by {drift:.3g} (relative)")

    done = 0
    since_refresh = 0
    t = 0
    while done < burn_in:
        block = min(tune_block, burn_in - done)
        chain.reset_counters()
        metropolis_sweep(chain, block)
        if tune and proposal == "gaussian":
            t += 1
            tune_sigma(chain, chain.acceptance_rate, 1.0 / t**0.6)
        done += block
        since_refresh += block
        if since_refresh >= refresh_every:
            refresh()
            since_refresh = 0
    chain.reset_counters()

    n_rec = (sweeps - burn_in) // thin
    rec_sweeps = np.empty(n_rec, dtype=np.int64)
    energy = np.empty(n_rec)
    acc_trace = np.empty(n_rec)
    obs = {k: np.empty(n_rec) for k in observables}
    snapshots = []
    for i in range(n_rec):
        metropolis_sweep(chain, thin)
        since_refresh += thin
        if since_refresh >= refresh_every:
            refresh()
            since_refresh = 0
        rec_sweeps[i] = chain.sweep
        if guard is not None:
            guard(chain.config, chain.sweep)
        energy[i] = chain.config.energy
        acc_trace[i] = chain.acceptance_rate
        for k, f in observables.items():
            obs[k][i] = f(chain.config)
        if snapshot_every and (i + 1) % snapshot_every == 0:
            snapshots.append((chain.sweep, chain.config.positions.copy()))
    refresh()
    traces = {"H": energy, **obs}
    diag = ChainDiagnostics.from_traces(traces) if n_rec >= 4 else None
    return ChainResult(sweeps=rec_sweeps, energy=energy, observables=obs, acceptance=chain.acceptance_rate,
                       sigma=chain.sigma, chain=chain, diagnostics=diag, max_drift=max_drift,
                       snapshots=snapshots, acceptance_trace=acc_trace)


def random_configuration(n, kernel, rng, potential=None, radius=None):
    """Uniform initial positions: on the torus, or in a ball of ``radius``."""
    if isinstance(kernel, TorusKernel):
        return Configuration(rng.random((n, 3)), kernel)
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = (radius if radius is not None else 0.43) * rng.random(n) ** (1.0 / 3.0)
    return Configuration(v * r[:, None], kernel, potential)
