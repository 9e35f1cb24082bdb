"""Ground states and lower-bound certificates.

Torus certificate (smearing argument).  With ``gamma_r`` the normalized
indicator of the radius-r ball,

    0 <= <gamma_r * mu_X, g * (gamma_r * mu_X)>
       = sum_{i != j} (g * gamma_r * gamma_r)(x_i - x_j) + N S(r)
      <= 2 H(X) + N^2 C_sub r^2 + N S(r),

where ``S(r) = (g * gamma_r * gamma_r)(0)`` and ``C_sub`` bounds
``(g * gamma_r * gamma_r - g) / r^2`` from above.  Hence
``H(X) >= B(N) = -(C_sub N^2 r^2 + N S(r)) / 2``.

Euclidean certificate.  For the free kernel ``g * gamma_r * gamma_r <= g``
(superharmonicity) and ``gamma_r * (g * mu_V) >= g * mu_V - 3 r^2 / 10``
because ``Laplacian(g * mu_V) >= -3``.  Expanding
``0 <= <g * (gamma_r * mu_X - N mu_V), gamma_r * mu_X - N mu_V>`` gives

    H(X) - N <zeta, mu_X> >= -N S_free(r) / 2 - 3 N^2 r^2 / 10,

with ``S_free(r) = 6 kappa / (5 r)``; the optimal ``r = (kappa/N)^(1/3)``
yields ``-0.9 kappa^(2/3) N^(4/3)`` exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .kernel import FreeKernel, TorusKernel, torus_green
from .sampler import ChainState, metropolis_sweep
from .system import Configuration, _confine, _free_green

# Largest smearing radius used on the torus; N^(-1/3) is clamped to it.
MAX_TORUS_RADIUS = 0.45
SAFETY_FACTOR = 2.0
ANNEAL_STAGES = 40


class BudgetExhausted(RuntimeWarning):
    pass


@dataclass
class Certificate:
    """Numerical lower bound ``B(N) <= min_X H_N(X)``.

    Attributes
    ----------
    n : int
    r : float
        Smearing radius.
    self_energy : float
        S(r), the doubly smeared kernel at the origin.
    c_sub : float
        Subharmonicity constant (measured value times the safety factor
        for the torus; exact for the Euclidean bound).
    bound : float
        B(N) = -(c_sub N^2 r^2 + N S(r)) / 2.
    h_opt : float, optional
        Best energy found by the optimizer.
    """

    n: int
    r: float
    self_energy: float
    c_sub: float
    bound: float
    h_opt: float = math.nan
    domain: str = "torus"
    label: str = "numerical certificate"
    c_sub_measured: float = math.nan

    @property
    def scaled_bound(self):
        return self.bound / self.n ** (4.0 / 3.0)

    @property
    def scaled_h_opt(self):
        return self.h_opt / self.n ** (4.0 / 3.0)

    def as_row(self):
        return {
            "N": self.n,
            "r": self.r,
            "S_r": self.self_energy,
            "C_sub": self.c_sub,
            "B_N": self.bound,
            "H_opt": self.h_opt,
            "B_over_N43": self.scaled_bound,
            "H_opt_over_N43": self.scaled_h_opt,
            "label": self.label,
        }


def smearing_radius(n):
    return min(n ** (-1.0 / 3.0), MAX_TORUS_RADIUS)


def certify_lower_bound(n, kernel, m=64, safety=SAFETY_FACTOR):
    """Torus certificate B(N) with ``r = N^(-1/3)`` (clamped to 0.45)."""
    if n < 1:
        raise ValueError("N must be positive")
    if not isinstance(kernel, TorusKernel) or kernel.d != 3:
        raise TypeError("the smearing certificate is implemented for the 3-torus")
    r = smearing_radius(n)
    s = float(kernel.smeared_kernel(np.zeros(3), r, 2))
    radii = [rr for rr in (r, r / 2.0, 2.0 * r) if 0.0 < rr < 0.5]
    measured = max(kernel.subharmonic_constant(rr, m) for rr in radii)
    c_sub = safety * measured
    bound = -0.5 * (c_sub * n * n * r * r + n * s)
    return Certificate(n, r, s, c_sub, bound, c_sub_measured=measured)


def certify_euclidean_lower_bound(n, equilibrium):
    """Analytic bound on ``H(X) - N <zeta, mu_X>`` for quadratic confinement."""
    if n < 1:
        raise ValueError("N must be positive")
    kappa = equilibrium.kappa
    r = (kappa / n) ** (1.0 / 3.0)
    s = 6.0 * kappa / (5.0 * r)
    c = 0.6  # -N^2 c r^2 / 2 = -3 N^2 r^2 / 10
    bound = -0.5 * (c * n * n * r * r + n * s)
    return Certificate(n, r, s, c, bound, domain="euclidean", label="analytic certificate", c_sub_measured=c)


def euclidean_energy_constant(equilibrium):
    """Constant C with ``L_N >= -C N^(4/3) ||mu_V||_inf^(1/3)`` implied by the analytic bound."""
    return 0.9 * equilibrium.kappa ** (2.0 / 3.0) / equilibrium.density ** (1.0 / 3.0)


# -- certificate audit ----------------------------------------------------------------


def smeared_self_interaction(positions, kernel, r, cutoff=32):
    """``<gamma_r * mu_X, g * (gamma_r * mu_X)>`` by its Fourier series.

    Every term is nonnegative; frequencies are summed over ``|xi| <= cutoff``.
    """
    from .kernel import ball_transform

    xi, n2 = kernel._recip_vectors(cutoff)
    k = 2.0 * math.pi * np.sqrt(n2)
    coef = ball_transform(k * r) ** 2 / (4.0 * math.pi**2 * n2)
    pos = np.asarray(positions, dtype=float)
    total = 0.0
    for start in range(0, len(xi), 4096):
        ph = 2.0 * math.pi * (pos @ xi[start : start + 4096].T)
        s2 = np.cos(ph).sum(0) ** 2 + np.sin(ph).sum(0) ** 2
        # half-space vectors: each represents +xi and -xi
        total += 2.0 * float(np.dot(coef[start : start + 4096], s2))
    return total


def audit_certificate(config, cert):
    """Check the certificate's inequality chain term by term on one configuration.

    Returns a dict of the terms and a boolean per inequality.
    """
    kernel = config.kernel
    pos = config.positions
    n = config.n
    r = cert.r
    i, j = np.triu_indices(n, 1)
    disp = pos[i] - pos[j]
    smeared_pairs = 2.0 * float(np.sum(kernel.smeared_kernel(disp, r, 2))) if len(disp) else 0.0
    pair_sum = 2.0 * config.energy
    positivity = smeared_self_interaction(pos, kernel, r)
    closure = smeared_pairs + n * cert.self_energy
    return {
        "positivity": positivity,
        "smeared_pairs_plus_self": closure,
        "positivity_ok": positivity >= 0.0,
        "pairwise": smeared_pairs,
        "pairwise_bound": pair_sum + n * n * cert.c_sub * r * r,
        "pairwise_ok": smeared_pairs <= pair_sum + n * n * cert.c_sub * r * r,
        "energy": config.energy,
        "bound": cert.bound,
        "bound_ok": cert.bound <= config.energy,
    }


# -- minimization ---------------------------------------------------------------------


@njit(cache=True)
def _descent_torus(pos, pair, inter, table, m, step, max_passes):
    """Coordinate descent with +-step moves along each axis; returns passes used."""
    n = pos.shape[0]
    row = np.empty(n)
    passes = 0
    improved = True
    while improved and passes < max_passes:
        improved = False
        passes += 1
        for j in range(n):
            for ax in range(3):
                for sgn in (-1.0, 1.0):
                    x = pos[j].copy()
                    x[ax] += sgn * step
                    x[ax] -= math.floor(x[ax])
                    new = 0.0
                    for k in range(n):
                        if k == j:
                            row[k] = 0.0
                        else:
                            row[k] = torus_green(x[0] - pos[k, 0], x[1] - pos[k, 1], x[2] - pos[k, 2], table, m)
                            new += row[k]
                    if new < inter[j] - 1e-13 and math.isfinite(new):
                        for k in range(n):
                            if k != j:
                                inter[k] += row[k] - pair[j, k]
                                pair[j, k] = row[k]
                                pair[k, j] = row[k]
                        inter[j] = new
                        pos[j, 0] = x[0]
                        pos[j, 1] = x[1]
                        pos[j, 2] = x[2]
                        improved = True
    return passes


@njit(cache=True)
def _descent_free(pos, pair, inter, conf, kappa, code, params, step, max_passes):
    n = pos.shape[0]
    row = np.empty(n)
    passes = 0
    improved = True
    while improved and passes < max_passes:
        improved = False
        passes += 1
        for j in range(n):
            for ax in range(3):
                for sgn in (-1.0, 1.0):
                    x = pos[j].copy()
                    x[ax] += sgn * step
                    new = 0.0
                    for k in range(n):
                        if k == j:
                            row[k] = 0.0
                        else:
                            row[k] = _free_green(x[0] - pos[k, 0], x[1] - pos[k, 1], x[2] - pos[k, 2], kappa)
                            new += row[k]
                    v = _confine(x[0], x[1], x[2], code, params)
                    delta = new - inter[j] + n * (v - conf[j])
                    if delta < -1e-13 and math.isfinite(new):
                        for k in range(n):
                            if k != j:
                                inter[k] += row[k] - pair[j, k]
                                pair[j, k] = row[k]
                                pair[k, j] = row[k]
                        inter[j] = new
                        conf[j] = v
                        pos[j, 0] = x[0]
                        pos[j, 1] = x[1]
                        pos[j, 2] = x[2]
                        improved = True
    return passes


def local_descent(config, step=None, tol=1e-9, passes_per_level=25, max_passes=5000):
    """Coordinate descent with a step halved after each level.

    A level ends when a full pass finds no improving move or after
    ``passes_per_level`` passes.  Returns True when the finest level ended
    without improvement and the total pass budget was not exhausted.
    """
    if config.n < 2 and config.domain == "torus":
        return True
    if step is None:
        step = 0.25 * config.n ** (-1.0 / 3.0)
    used = 0
    settled = False
    while step >= tol:
        budget = min(passes_per_level, max_passes - used)
        if budget <= 0:
            config.refresh()
            return False
        if config.domain == "torus":
            k = config.kernel
            done = _descent_torus(config.positions, config.pair, config.interaction, k.table, k.table_size,
                                  step, budget)
        else:
            p = config.potential
            done = _descent_free(config.positions, config.pair, config.interaction, config.confinement,
                                 config.kernel.kappa, p.code, p.params(), step, budget)
        used += done
        settled = done < budget
        step *= 0.5
    config.refresh()
    return settled


@dataclass
class GroundState:
    """Best configuration found by :func:`minimize_energy`."""

    config: Configuration
    energy: float
    converged: bool
    seeds: tuple
    energies: list = field(default_factory=list)


def anneal(config, seed=0, sweeps=2000, stages=ANNEAL_STAGES, beta_lo=None, beta_hi=None):
    """Simulated annealing with a geometric inverse-temperature ladder."""
    n = config.n
    beta_lo = 0.1 * n ** (1.0 / 3.0) if beta_lo is None else beta_lo
    beta_hi = 50.0 * n ** (1.0 / 3.0) if beta_hi is None else beta_hi
    per_stage = max(1, sweeps // stages)
    chain = ChainState.create(config, beta_lo, seed=seed, chain_id=0)
    for beta in np.geomspace(beta_lo, beta_hi, stages):
        chain.beta = float(beta)
        for _ in range(max(1, per_stage // 5)):
            chain.reset_counters()
            metropolis_sweep(chain, min(5, per_stage))
            rate = chain.acceptance_rate
            lo, hi = (1e-5, 1.0) if config.domain == "torus" else (1e-5, 10.0)
            chain.sigma = float(np.clip(chain.sigma * math.exp(rate - 0.35), lo, hi))
    config.refresh()
    return config


def _initial(n, kernel, rng, potential=None, radius=None):
    if isinstance(kernel, TorusKernel):
        return Configuration(rng.random((n, 3)), kernel)
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    rad = (radius or 0.43) * rng.random(n) ** (1.0 / 3.0)
    return Configuration(v * rad[:, None], kernel, potential)


def minimize_energy(n, kernel, potential=None, seeds=(0,), sweeps=2000, tol=1e-9, max_passes=5000,
                    radius=None, polish=None):
    """Anneal then descend from each seed; return the best result.

    Parameters
    ----------
    n : int
        Number of particles.
    kernel : TorusKernel or FreeKernel
    potential : ConfiningPotential, optional
        Required for the Euclidean domain.
    seeds : sequence of int
        One restart per seed; the minimum over restarts is returned.
    sweeps : int
        Annealing budget per restart.
    polish : ConfiningPotential, optional
        If given, a final descent is run with this potential instead (the
        annealing always uses ``potential``).
    """
    if n < 1:
        raise ValueError("N must be positive")
    best = None
    energies = []
    converged_all = True
    for seed in seeds:
        rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(7,)))
        cfg = _initial(n, kernel, rng, potential, radius)
        if n > 1 or cfg.domain == "euclidean":
            anneal(cfg, seed=seed, sweeps=sweeps)
            converged_all &= local_descent(cfg, tol=tol, max_passes=max_passes)
        if polish is not None:
            cfg = Configuration(cfg.positions, kernel, polish)
            converged_all &= local_descent(cfg, step=1e-3, tol=tol, max_passes=max_passes)
        energies.append(cfg.energy)
        if best is None or cfg.energy < best.energy:
            best = cfg
    return GroundState(best, float(best.energy), converged_all, tuple(seeds), energies)


def regularized_ground_state(n, equilibrium, seeds=(0,), sweeps=2000, tol=1e-9):
    """Minimize ``H(X) - N <zeta, mu_X>``, i.e. the energy with confinement ``V - zeta``.

    Returns the :class:`GroundState` whose ``energy`` is the upper bound on L_N.
    """
    kernel = FreeKernel(equilibrium.d)
    # V - zeta is bounded at infinity, so annealing under it lets particles
    # escape; anneal under V (which agrees with it on Sigma up to the
    # constant shift) and only polish under V - zeta.
    return minimize_energy(n, kernel, equilibrium.potential, seeds=seeds, sweeps=sweeps, tol=tol,
                           radius=equilibrium.radius, polish=equilibrium.screened_potential)


def regularized_energy(config, equilibrium):
    """``H(X) - N <zeta, mu_X>`` for a configuration with the quadratic potential."""
    return config.energy - config.n * equilibrium.zeta_statistic(config.positions)
