"""Particle configurations and their energies.

A :class:`Configuration` keeps the pair-energy matrix, the per-particle
interaction sums and the confinement values cached, so that a single-particle
move costs O(N) kernel evaluations.  Two Hamiltonians are supported:

torus      H = sum_{i<j} g(x_i - x_j)
euclidean  H = 1/2 sum_{j != k} g(x_j - x_k) + N sum_j V(x_j)
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .kernel import FreeKernel, TorusKernel, torus_green

SNAPSHOT_SCHEMA = "coulombgas-configuration/1"

# numba confinement kinds
QUADRATIC = 0
SCREENED = 1


class CoincidentPointsError(ValueError):
    """Two particles coincide, so the energy is infinite."""


@dataclass(frozen=True)
class ConfiningPotential:
    """Radial confining potential in closed form.

    ``kind="quadratic"`` is ``V(x) = |x|^2/2 + shift``.  ``kind="screened"``
    is the quadratic potential minus the effective potential zeta of its
    equilibrium measure (ball of ``radius``), i.e. ``V - zeta``; it is what the
    regularized ground state minimizes.
    """

    kind: str = "quadratic"
    shift: float = 0.0
    radius: float = 0.0
    kappa: float = 1.0 / (4.0 * math.pi)

    def __post_init__(self):
        if self.kind not in ("quadratic", "screened"):
            raise ValueError(f"unknown potential kind {self.kind!r}")

    @property
    def code(self):
        return QUADRATIC if self.kind == "quadratic" else SCREENED

    def params(self):
        return np.array([self.shift, self.radius, self.kappa])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        if self.kind == "quadratic":
            out = 0.5 * r2 + self.shift
        else:
            r = np.sqrt(r2)
            R = self.radius
            with np.errstate(divide="ignore"):
                outside = -self.kappa / np.where(r > 0, r, 1.0) + 0.6 * R * R
            out = np.where(r <= R, 0.5 * r2 + self.shift, outside)
        return float(out) if np.ndim(out) == 0 else out

    def laplacian(self, x):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        if self.kind == "quadratic":
            return np.full(x.shape[:-1], float(d))
        r = np.linalg.norm(x, axis=-1)
        return np.where(r <= self.radius, float(d), 0.0)

    @property
    def lower_bound(self):
        if self.kind == "quadratic":
            return self.shift
        return min(self.shift, 0.6 * self.radius**2 - self.kappa / self.radius)


@njit(cache=True, inline="always")
def _confine(x, y, z, code, params):
    r2 = x * x + y * y + z * z
    if code == QUADRATIC:
        return 0.5 * r2 + params[0]
    r = math.sqrt(r2)
    if r <= params[1]:
        return 0.5 * r2 + params[0]
    return -params[2] / r + 0.6 * params[1] * params[1]


@njit(cache=True, inline="always")
def _free_green(dx, dy, dz, kappa):
    r2 = dx * dx + dy * dy + dz * dz
    if r2 == 0.0:
        return np.inf
    return kappa / math.sqrt(r2)


@njit(cache=True)
def _pair_matrix_torus(pos, table, m):
    n = pos.shape[0]
    pair = np.zeros((n, n))
    for i in range(n):
        for k in range(i + 1, n):
            e = torus_green(pos[i, 0] - pos[k, 0], pos[i, 1] - pos[k, 1], pos[i, 2] - pos[k, 2], table, m)
            pair[i, k] = e
            pair[k, i] = e
    return pair


@njit(cache=True)
def _pair_matrix_free(pos, kappa):
    n = pos.shape[0]
    pair = np.zeros((n, n))
    for i in range(n):
        for k in range(i + 1, n):
            e = _free_green(pos[i, 0] - pos[k, 0], pos[i, 1] - pos[k, 1], pos[i, 2] - pos[k, 2], kappa)
            pair[i, k] = e
            pair[k, i] = e
    return pair


@njit(cache=True)
def _row_torus(pos, j, x, table, m):
    n = pos.shape[0]
    row = np.zeros(n)
    for k in range(n):
        if k != j:
            row[k] = torus_green(x[0] - pos[k, 0], x[1] - pos[k, 1], x[2] - pos[k, 2], table, m)
    return row


@njit(cache=True)
def _row_free(pos, j, x, kappa):
    n = pos.shape[0]
    row = np.zeros(n)
    for k in range(n):
        if k != j:
            row[k] = _free_green(x[0] - pos[k, 0], x[1] - pos[k, 1], x[2] - pos[k, 2], kappa)
    return row


class Configuration:
    """N particle positions together with cached energies.

    Parameters
    ----------
    positions : array_like, shape (N, d)
        Particle positions.  Torus positions are reduced to [0, 1)^d.
    kernel : TorusKernel or FreeKernel
        Interaction.  The domain follows from the kernel type.
    potential : ConfiningPotential, optional
        Required for the Euclidean domain.
    """

    def __init__(self, positions, kernel, potential=None):
        pos = np.array(positions, dtype=float, ndmin=2)
        if isinstance(kernel, TorusKernel):
            self.domain = "torus"
            pos = np.mod(pos, 1.0)
            pos[pos >= 1.0] = 0.0
        elif isinstance(kernel, FreeKernel):
            self.domain = "euclidean"
            if potential is None:
                raise ValueError("Euclidean configurations need a confining potential")
        else:
            raise TypeError(f"unsupported kernel {kernel!r}")
        if pos.shape[1] != kernel.d or kernel.d != 3:
            raise ValueError(f"positions must have shape (N, 3), got {pos.shape}")
        self.kernel = kernel
        self.potential = potential
        self.positions = np.ascontiguousarray(pos)
        self.refresh()

    # -- basic properties -------------------------------------------------------

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def d(self):
        return self.positions.shape[1]

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"Configuration(domain={self.domain!r}, N={self.n}, H={self.energy:.10g})"

    def copy(self):
        new = object.__new__(Configuration)
        new.domain = self.domain
        new.kernel = self.kernel
        new.potential = self.potential
        new.positions = self.positions.copy()
        new.pair = self.pair.copy()
        new.interaction = self.interaction.copy()
        new.confinement = self.confinement.copy()
        new.energy = self.energy
        return new

    # -- energies ---------------------------------------------------------------------

    def _potential_values(self, pts):
        if self.domain == "torus":
            return np.zeros(len(pts))
        return np.asarray(self.potential(pts), dtype=float).reshape(len(pts))

    def refresh(self):
        """Recompute every cache from the positions (O(N^2))."""
        if self.domain == "torus":
            pair = _pair_matrix_torus(self.positions, self.kernel.table, self.kernel.table_size)
        else:
            pair = _pair_matrix_free(self.positions, self.kernel.kappa)
        if not np.all(np.isfinite(pair)):
            i, k = np.argwhere(~np.isfinite(pair))[0]
            raise CoincidentPointsError(f"particles {i} and {k} coincide")
        self.pair = pair
        self.interaction = pair.sum(axis=1)
        self.confinement = self._potential_values(self.positions)
        self.energy = self._energy_from_caches()
        return self.energy

    def _energy_from_caches(self):
        h = 0.5 * float(self.interaction.sum())
        if self.domain == "euclidean":
            h += self.n * float(self.confinement.sum())
        return h

    def total_energy(self):
        """Total energy H; refreshes the caches."""
        return self.refresh()

    @property
    def local_energies(self):
        """Local energies l_j = P mu_{X, hat j}(x_j).

        Torus: ``sum_{k != j} g(x_k - x_j)``.  Euclidean:
        ``sum_{k != j} g + sum_{k != j} V(x_k) + (N-1) V(x_j)``.
        """
        if self.domain == "torus":
            return self.interaction.copy()
        v = self.confinement
        return self.interaction + (v.sum() - v) + (self.n - 1) * v

    def local_energy(self, j):
        if not 0 <= j < self.n:
            raise IndexError(f"particle index {j} out of range for N={self.n}")
        return float(self.local_energies[j])

    def energy_from_local(self):
        """H reassembled from the local energies (sum of local energies)."""
        local = self.local_energies
        if self.domain == "torus":
            return 0.5 * float(local.sum())
        return 0.5 * float(np.sum(local + 2.0 * self.confinement))

    def direct_energy(self):
        """O(N^2) double sum without touching the caches."""
        pos = self.positions
        total = 0.0
        for i in range(self.n):
            if i + 1 < self.n:
                disp = pos[i] - pos[i + 1 :]
                total += float(np.sum(self.kernel(disp)))
        if self.domain == "euclidean":
            total += self.n * float(np.sum(self._potential_values(pos)))
        return total

    # -- moves ------------------------------------------------------------------------------

    def _check_index(self, j):
        if not 0 <= j < self.n:
            raise IndexError(f"particle index {j} out of range for N={self.n}")

    def _new_row(self, j, x_new):
        x = np.asarray(x_new, dtype=float).reshape(self.d)
        if self.domain == "torus":
            x = np.mod(x, 1.0)
            row = _row_torus(self.positions, j, x, self.kernel.table, self.kernel.table_size)
        else:
            row = _row_free(self.positions, j, x, self.kernel.kappa)
        if not np.all(np.isfinite(row)):
            k = int(np.argmax(~np.isfinite(row)))
            raise CoincidentPointsError(f"move of particle {j} lands on particle {k}")
        return x, row

    def delta_energy_move(self, j, x_new):
        """H(X with x_j -> x_new) - H(X) using O(N) kernel evaluations."""
        self._check_index(j)
        x, row = self._new_row(j, x_new)
        delta = float(row.sum() - self.interaction[j])
        if self.domain == "euclidean":
            delta += self.n * (float(self._potential_values(x[None, :])[0]) - self.confinement[j])
        return delta

    def apply_move(self, j, x_new):
        """Move particle j and update all caches in O(N); returns the delta."""
        self._check_index(j)
        x, row = self._new_row(j, x_new)
        delta = float(row.sum() - self.interaction[j])
        self.interaction += row - self.pair[j]
        self.interaction[j] = row.sum()
        self.pair[j, :] = row
        self.pair[:, j] = row
        if self.domain == "euclidean":
            v = float(self._potential_values(x[None, :])[0])
            delta += self.n * (v - self.confinement[j])
            self.confinement[j] = v
        self.positions[j] = x
        self.energy += delta
        return delta

    # -- snapshots ------------------------------------------------------------------

    def to_csv(self, seed=0, sweep=0):
        """Snapshot as CSV text; floats are written with round-trip precision."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["schema", SNAPSHOT_SCHEMA])
        w.writerow(["d", "N", "domain", "seed", "sweep"])
        w.writerow([self.d, self.n, self.domain, seed, sweep])
        w.writerow([f"x{a}" for a in range(self.d)])
        for p in self.positions:
            w.writerow([repr(float(v)) for v in p])
        return buf.getvalue()

    @staticmethod
    def read_csv(text):
        """Parse a snapshot; returns (positions, metadata dict)."""
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["schema", SNAPSHOT_SCHEMA]:
            raise ValueError("not a configuration snapshot")
        d, n, domain, seed, sweep = rows[2]
        d, n = int(d), int(n)
        pos = np.array([[float(v) for v in r] for r in rows[4 : 4 + n]], dtype=float).reshape(n, d)
        return pos, {"d": d, "N": n, "domain": domain, "seed": int(seed), "sweep": int(sweep)}
