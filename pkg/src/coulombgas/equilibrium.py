"""Equilibrium measure for the quadratic confining potential in d = 3.

With ``Laplacian g = -delta_0`` and ``V = |x|^2/2 + c``, the minimizer of

    E(mu) = 1/2 <g * mu, mu> + <V, mu>

over probability measures is uniform on a ball: the Euler-Lagrange condition
``g * mu_V + V = const`` on the support forces density ``Laplacian V = 3`` and
hence radius ``(4 pi)^(-1/3)``.  The constant ``c`` is fixed in closed form so
that ``E(mu_V) = 0``, which makes ``zeta = P mu_V`` vanish on the support.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernel import KAPPA3, FreeKernel
from .system import ConfiningPotential


class UnsupportedPotentialError(NotImplementedError):
    """Only the quadratic potential in d = 3 has analytic equilibrium data."""


@dataclass(frozen=True)
class EquilibriumMeasure:
    """Uniform ball measure ``mu_V`` with its effective potential ``zeta``.

    Attributes
    ----------
    radius : float
        Radius R of the support Sigma.
    density : float
        Constant density of mu_V on Sigma.
    shift : float
        Additive constant in V making E(mu_V) = 0.
    """

    d: int
    radius: float
    density: float
    shift: float
    kappa: float = KAPPA3

    @property
    def potential(self):
        return ConfiningPotential("quadratic", shift=self.shift)

    @property
    def screened_potential(self):
        """V - zeta, the confinement seen by the regularized energy."""
        return ConfiningPotential("screened", shift=self.shift, radius=self.radius, kappa=self.kappa)

    @property
    def mass(self):
        return self.density * (4.0 / 3.0) * math.pi * self.radius**3

    @property
    def mean_potential(self):
        """<V, mu_V> = 3 R^2 / 10 + shift."""
        return 0.3 * self.radius**2 + self.shift

    @property
    def sup_zeta_minus_v(self):
        """sup_x |zeta(x) - V(x)|, attained at the origin."""
        return 0.9 * self.radius**2

    def V(self, x):
        return self.potential(x)

    def measure_potential(self, x):
        """(g * mu_V)(x): kappa (3R^2 - r^2) / (2R^3) inside, kappa/r outside."""
        r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        R = self.radius
        inside = self.kappa * self.mass * (3.0 * R * R - r * r) / (2.0 * R**3)
        with np.errstate(divide="ignore"):
            out = np.where(r <= R, inside, self.kappa / np.where(r > 0, r, 1.0))
        return float(out) if np.ndim(out) == 0 else out

    def zeta(self, x):
        """Effective potential zeta = g * mu_V + <V, mu_V> + V.

        Exactly 0 on Sigma; ``kappa/r + r^2/2 - 3R^2/2`` outside.
        """
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        r = np.sqrt(r2)
        R = self.radius
        with np.errstate(divide="ignore"):
            outside = self.kappa / np.where(r > 0, r, 1.0) + 0.5 * r2 - 1.5 * R * R
        out = np.where(r <= R, 0.0, outside)
        return float(out) if np.ndim(out) == 0 else out

    def zeta_statistic(self, positions):
        """<zeta, mu_X> = sum_j zeta(x_j) (nonnegative)."""
        return float(np.sum(self.zeta(np.atleast_2d(positions))))

    def partition_zeta(self):
        """Integral of exp(-zeta) over R^3: |Sigma| plus a radial exterior integral."""
        from scipy.integrate import quad

        R, k = self.radius, self.kappa

        def integrand(s):
            return s * s * math.exp(-(k / s + 0.5 * s * s - 1.5 * R * R))

        tail, _ = quad(integrand, R, np.inf, epsabs=1e-13, epsrel=1e-12)
        return (4.0 / 3.0) * math.pi * R**3 + 4.0 * math.pi * tail

    def inside(self, x, tol=0.0):
        return np.linalg.norm(np.asarray(x, dtype=float), axis=-1) <= self.radius + tol

    def sample(self, n, rng):
        """n i.i.d. points from mu_V (uniform on the ball)."""
        v = rng.standard_normal((n, self.d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        rad = self.radius * rng.random(n) ** (1.0 / self.d)
        return v * rad[:, None]

    def energy(self):
        """E(mu_V), zero by construction of the shift."""
        R = self.radius
        self_energy = 0.5 * 1.2 * R * R  # 1/2 <g * mu_V, mu_V> = 3R^2/5
        return self_energy + self.mean_potential

    def summary(self, audit_radius=5.0):
        return {
            "d": self.d,
            "R": self.radius,
            "rho": self.density,
            "normalization_constant": self.shift,
            "sup_zeta_minus_V": self.sup_zeta_minus_v,
            "audit_radius": audit_radius,
        }


def solve_quadratic_equilibrium(d=3, potential="quadratic", kernel=None):
    """Equilibrium data for ``V = |x|^2/2`` with the Delta g = -delta_0 kernel."""
    if potential != "quadratic":
        raise UnsupportedPotentialError(f"no analytic equilibrium data for {potential!r}")
    if d != 3:
        raise UnsupportedPotentialError("analytic equilibrium data only for d = 3")
    kernel = kernel or FreeKernel(3)
    if not math.isclose(kernel.kappa, KAPPA3, rel_tol=1e-15):
        raise UnsupportedPotentialError("kernel must be normalized by Delta g = -delta_0")
    density = float(d)  # Laplacian of |x|^2/2
    unit_ball = math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)
    radius = (density * unit_ball) ** (-1.0 / d)
    shift = -0.9 * radius**2
    return EquilibriumMeasure(d=d, radius=radius, density=density, shift=shift, kappa=kernel.kappa)
