"""Coulomb interaction kernels.

Two kernels are provided:

* :class:`TorusKernel` -- the mean-zero periodic Green's function on the unit
  torus T^3, normalized by ``Laplacian g = -delta_0 + 1``.  It is evaluated
  either directly by Ewald summation or, in hot loops, from a table of the
  smooth remainder ``g - kappa * chi(r) / r`` with tricubic interpolation.
* :class:`FreeKernel` -- ``kappa_d |x|^(2-d)`` on R^d with
  ``Laplacian g = -delta_0``.

Both kernels also expose smearings by the normalized ball indicator
``gamma_r``, which the ground-state certificate relies on.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np
from numba import njit, prange
from scipy import optimize
from scipy.special import erf, erfc

KAPPA3 = 1.0 / (4.0 * math.pi)

# The singular part kappa*chi(r)/r is supported in r < CUTOFF_RADIUS.  The
# radius must not exceed 1/2 so that only the nearest image contributes.
CUTOFF_RADIUS = 0.5

# Real-space and reciprocal sums are truncated where erfc and the Gaussian
# damping fall below ~1e-17.
_ERFC_ARG = 6.1
_RECIP_FACTOR = 1.95

TABLE_MAGIC = b"CGKT"
TABLE_VERSION = 1

# int_{[0,1]^3} |u|^{-1} du, used for the singular cell of grid means.
UNIT_CUBE_INV_R = 1.5 * math.log(2.0 + math.sqrt(3.0)) - math.pi / 4.0

# central second-difference weights (center, offset 1, 2, ...)
_FD_WEIGHTS = {
    2: (-2.0, 1.0),
    4: (-5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0),
    6: (-49.0 / 18.0, 3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0),
}


class KernelError(Exception):
    """Base class for kernel failures."""


class SingularInputError(KernelError, ValueError):
    """Raised when a kernel is evaluated at its singularity."""


class UnsupportedDimensionError(KernelError, NotImplementedError):
    """Raised for torus dimensions other than 3."""


class KernelDomainError(KernelError, ValueError):
    """Raised for smearing radii outside (0, 1/2)."""


class TableFormatError(KernelError, ValueError):
    """Raised when a serialized kernel table is malformed or corrupt."""


def coulomb_constant(d):
    """Return kappa_d with Laplacian(kappa_d |x|^(2-d)) = -delta_0 on R^d."""
    if d < 3:
        raise UnsupportedDimensionError(f"Coulomb kernel |x|^(2-d) needs d >= 3, got {d}")
    sphere_area = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
    return 1.0 / ((d - 2) * sphere_area)


def ewald_cutoffs(alpha):
    """Real-space shells and reciprocal cutoff giving tails below ~1e-17."""
    if alpha <= 0:
        raise ValueError("Ewald splitting parameter must be positive")
    shells = max(1, math.ceil(_ERFC_ARG / alpha - 0.5))
    recip = math.ceil(_RECIP_FACTOR * alpha)
    return shells, recip


def ball_transform(t):
    """Fourier transform of gamma_r at |k| r = t: 3 (sin t - t cos t) / t^3."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = np.abs(t) < 1e-3
    ts = t[small]
    out[small] = 1.0 - ts**2 / 10.0 + ts**4 / 280.0
    tl = t[~small]
    out[~small] = 3.0 * (np.sin(tl) - tl * np.cos(tl)) / tl**3
    return out


def ball_potential(s, r):
    """Newtonian potential of gamma_r (unit charge, kernel 1/s) at distance s."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(s >= r, 1.0 / s, (3.0 * r * r - s * s) / (2.0 * r**3))


def double_ball_potential(s, r):
    """Interaction of two gamma_r charges at center distance s (kernel 1/s)."""
    s = np.asarray(s, dtype=float)
    q = s / r
    inside = (1.2 - q**2 / 2.0 + 3.0 * q**3 / 16.0 - q**5 / 160.0) / r
    with np.errstate(divide="ignore"):
        return np.where(s >= 2.0 * r, 1.0 / s, inside)


def _box_antiderivative(x, y, z):
    r = np.sqrt(x * x + y * y + z * z)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (
            y * z * np.log(np.where(x + r > 0, x + r, 1.0))
            + x * z * np.log(np.where(y + r > 0, y + r, 1.0))
            + x * y * np.log(np.where(z + r > 0, z + r, 1.0))
            - 0.5 * x * x * np.where(x * r != 0, np.arctan(y * z / np.where(x * r != 0, x * r, 1.0)), 0.0)
            - 0.5 * y * y * np.where(y * r != 0, np.arctan(x * z / np.where(y * r != 0, y * r, 1.0)), 0.0)
            - 0.5 * z * z * np.where(z * r != 0, np.arctan(x * y / np.where(z * r != 0, z * r, 1.0)), 0.0)
        )
    return out


def box_inverse_distance(lo, hi):
    """Integral of 1/|y| over the axis-aligned boxes [lo, hi] (rows of shape (K, 3)).

    Closed form (Newtonian potential of a uniform box at the origin);
    finite when the origin lies inside or on the box.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    total = 0.0
    for i, xs in enumerate((lo[..., 0], hi[..., 0])):
        for j, ys in enumerate((lo[..., 1], hi[..., 1])):
            for k, zs in enumerate((lo[..., 2], hi[..., 2])):
                sign = 1.0 if (i + j + k) % 2 == 1 else -1.0
                total = total + sign * _box_antiderivative(xs, ys, zs)
    return total


# ---------------------------------------------------------------------------
# numba hot path
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _cutoff(r):
    # C^4 smoothstep: 1 at r = 0, 0 for r >= CUTOFF_RADIUS
    t = r / CUTOFF_RADIUS
    if t >= 1.0:
        return 0.0
    s = t**5 * (126.0 + t * (-420.0 + t * (540.0 + t * (-315.0 + 70.0 * t))))
    return 1.0 - s


@njit(cache=True)
def torus_green(dx, dy, dz, table, m):
    """Tabulated g at displacement (dx, dy, dz); +inf at the lattice points."""
    dx -= math.floor(dx + 0.5)
    dy -= math.floor(dy + 0.5)
    dz -= math.floor(dz + 0.5)
    ax = abs(dx)
    ay = abs(dy)
    az = abs(dz)
    r2 = ax * ax + ay * ay + az * az
    if r2 == 0.0:
        return np.inf
    last = m // 2 - 1
    ux = ax * m
    uy = ay * m
    uz = az * m
    ix = min(int(ux), last)
    iy = min(int(uy), last)
    iz = min(int(uz), last)
    tx = ux - ix
    ty = uy - iy
    tz = uz - iz
    wx0 = -tx * (tx - 1.0) * (tx - 2.0) / 6.0
    wx1 = (tx + 1.0) * (tx - 1.0) * (tx - 2.0) / 2.0
    wx2 = -(tx + 1.0) * tx * (tx - 2.0) / 2.0
    wx3 = (tx + 1.0) * tx * (tx - 1.0) / 6.0
    wy0 = -ty * (ty - 1.0) * (ty - 2.0) / 6.0
    wy1 = (ty + 1.0) * (ty - 1.0) * (ty - 2.0) / 2.0
    wy2 = -(ty + 1.0) * ty * (ty - 2.0) / 2.0
    wy3 = (ty + 1.0) * ty * (ty - 1.0) / 6.0
    wz0 = -tz * (tz - 1.0) * (tz - 2.0) / 6.0
    wz1 = (tz + 1.0) * (tz - 1.0) * (tz - 2.0) / 2.0
    wz2 = -(tz + 1.0) * tz * (tz - 2.0) / 2.0
    wz3 = (tz + 1.0) * tz * (tz - 1.0) / 6.0
    acc = 0.0
    for p in range(4):
        if p == 0:
            wx = wx0
        elif p == 1:
            wx = wx1
        elif p == 2:
            wx = wx2
        else:
            wx = wx3
        row = 0.0
        for q in range(4):
            if q == 0:
                wy = wy0
            elif q == 1:
                wy = wy1
            elif q == 2:
                wy = wy2
            else:
                wy = wy3
            b0 = ix + p
            b1 = iy + q
            col = (
                wz0 * table[b0, b1, iz]
                + wz1 * table[b0, b1, iz + 1]
                + wz2 * table[b0, b1, iz + 2]
                + wz3 * table[b0, b1, iz + 3]
            )
            row += wy * col
        acc += wx * row
    r = math.sqrt(r2)
    if r < CUTOFF_RADIUS:
        acc += KAPPA3 * _cutoff(r) / r
    return acc


@njit(cache=True, parallel=True)
def torus_green_many(disp, table, m):
    n = disp.shape[0]
    out = np.empty(n)
    for i in prange(n):
        out[i] = torus_green(disp[i, 0], disp[i, 1], disp[i, 2], table, m)
    return out


@njit(cache=True, parallel=True)
def torus_field_on_points(points, sources, table, m):
    """Sum over sources of g(point - source), one row per source."""
    n = points.shape[0]
    k = sources.shape[0]
    out = np.empty((k, n))
    for i in prange(n):
        for j in range(k):
            out[j, i] = torus_green(
                points[i, 0] - sources[j, 0],
                points[i, 1] - sources[j, 1],
                points[i, 2] - sources[j, 2],
                table,
                m,
            )
    return out


# ---------------------------------------------------------------------------
# torus kernel
# ---------------------------------------------------------------------------


def _reduce(x):
    x = np.asarray(x, dtype=float)
    return x - np.floor(x + 0.5)


def _cutoff_np(r):
    t = np.clip(np.asarray(r, dtype=float) / CUTOFF_RADIUS, 0.0, 1.0)
    s = t**5 * (126.0 + t * (-420.0 + t * (540.0 + t * (-315.0 + 70.0 * t))))
    return 1.0 - s


class TorusKernel:
    """Periodic Coulomb Green's function on the unit torus T^3.

    Parameters
    ----------
    d : int
        Torus dimension.  Only ``d = 3`` is implemented.
    alpha : float
        Ewald splitting parameter used for tabulation and direct evaluation.
    table_size : int
        Table resolution M per axis (even).  Only the octant [0, 1/2]^3 is
        stored; g is even in every coordinate.
    table : ndarray, optional
        Precomputed smooth-remainder table (used by :meth:`load`).

    Notes
    -----
    Instances are immutable after construction and may be shared read-only
    between chains.
    """

    def __init__(self, d=3, alpha=6.0, table_size=128, *, table=None, _meta=None):
        if d != 3:
            raise UnsupportedDimensionError(
                f"torus kernel is implemented for d = 3 only (got d = {d})"
            )
        if table_size < 16 or table_size % 2:
            raise ValueError("table_size must be an even integer >= 16")
        self.d = 3
        self.alpha = float(alpha)
        self.kappa = KAPPA3
        self.real_shells, self.recip_cutoff = ewald_cutoffs(self.alpha)
        self.table_size = int(table_size)
        self.g_reg0 = self._regular_value_at_origin(self.alpha)
        if table is None:
            table = self._tabulate()
        else:
            expected = (self.table_size // 2 + 3,) * 3
            if table.shape != expected:
                raise TableFormatError(f"table shape {table.shape} != {expected}")
        self.table = np.ascontiguousarray(table, dtype=np.float64)
        self.table.setflags(write=False)
        if _meta is not None:
            self.m_pot = _meta["m_pot"]
            self.minimizer = np.asarray(_meta["minimizer"], dtype=float)
        else:
            self.m_pot, self.minimizer = self._search_minimum(grid=128, seed=0)

    def __repr__(self):
        return (
            f"TorusKernel(alpha={self.alpha}, table_size={self.table_size}, "
            f"m_pot={self.m_pot:.12g})"
        )

    # -- direct Ewald ------------------------------------------------------

    def _images(self, shells):
        r = np.arange(-shells, shells + 1)
        return np.stack(np.meshgrid(r, r, r, indexing="ij"), -1).reshape(-1, 3).astype(float)

    @staticmethod
    def _recip_vectors(cutoff):
        r = np.arange(-cutoff, cutoff + 1)
        xi = np.stack(np.meshgrid(r, r, r, indexing="ij"), -1).reshape(-1, 3)
        n2 = (xi**2).sum(1)
        keep = (n2 > 0) & (n2 <= cutoff * cutoff)
        xi, n2 = xi[keep], n2[keep]
        lead = np.where(xi[:, 0] != 0, xi[:, 0], np.where(xi[:, 1] != 0, xi[:, 1], xi[:, 2]))
        half = lead > 0
        return xi[half].astype(float), n2[half].astype(float)

    def ewald(self, x, alpha=None):
        """Evaluate g(x) by direct Ewald summation.

        The result is independent of ``alpha`` up to roundoff; this is the
        reference evaluation that the tabulated kernel is checked against.
        """
        alpha = self.alpha if alpha is None else float(alpha)
        x = _reduce(x)
        scalar = x.ndim == 1
        x = np.atleast_2d(x)
        if np.any(np.einsum("ij,ij->i", x, x) < 1e-26):
            raise SingularInputError("g is singular at the lattice points")
        out = self._ewald_sum(x, alpha, drop_origin=False)
        return float(out[0]) if scalar else out

    def regular_part(self, x, alpha=None):
        """g(x) - kappa/|x| at the minimum-image displacement, finite at 0."""
        alpha = self.alpha if alpha is None else float(alpha)
        x = _reduce(x)
        scalar = x.ndim == 1
        out = self._ewald_sum(np.atleast_2d(x), alpha, drop_origin=True)
        return out[0] if scalar else out

    def _ewald_sum(self, x, alpha, drop_origin):
        shells, cutoff = ewald_cutoffs(alpha)
        images = self._images(shells)
        xi, n2 = self._recip_vectors(cutoff)
        coef = 2.0 * np.exp(-(math.pi**2) * n2 / alpha**2) / (4.0 * math.pi**2 * n2)
        out = np.empty(len(x))
        origin = np.all(images == 0.0, axis=1)
        for start in range(0, len(x), 512):
            xb = x[start : start + 512]
            d = np.linalg.norm(xb[:, None, :] + images[None], axis=-1)
            if drop_origin:
                far = d[:, ~origin]
                near = d[:, origin][:, 0]
                real = (erfc(alpha * far) / (4.0 * math.pi * far)).sum(1)
                # erfc(a r)/(4 pi r) - 1/(4 pi r) = -erf(a r)/(4 pi r)
                with np.errstate(invalid="ignore", divide="ignore"):
                    sr = np.where(
                        near > 1e-8,
                        -erf(alpha * near) / (4.0 * math.pi * np.where(near > 0, near, 1.0)),
                        -alpha / (2.0 * math.pi**1.5) * (1.0 - (alpha * near) ** 2 / 3.0),
                    )
                real = real + sr
            else:
                real = (erfc(alpha * d) / (4.0 * math.pi * d)).sum(1)
            rec = np.cos(2.0 * math.pi * (xb @ xi.T)) @ coef
            out[start : start + 512] = real + rec - 1.0 / (4.0 * alpha**2)
        return out

    @staticmethod
    def _regular_value_at_origin(alpha):
        shells, cutoff = ewald_cutoffs(alpha)
        r = np.arange(-shells, shells + 1)
        n = np.linalg.norm(np.stack(np.meshgrid(r, r, r, indexing="ij"), -1).reshape(-1, 3), axis=1)
        n = n[n > 0]
        xi, n2 = TorusKernel._recip_vectors(cutoff)
        return float(
            -alpha / (2.0 * math.pi**1.5)
            + (erfc(alpha * n) / (4.0 * math.pi * n)).sum()
            - 1.0 / (4.0 * alpha**2)
            + (2.0 * np.exp(-(math.pi**2) * n2 / alpha**2) / (4.0 * math.pi**2 * n2)).sum()
        )

    def _tabulate(self):
        m = self.table_size
        if m < 2 * self.recip_cutoff + 2:
            raise ValueError(
                f"table_size {m} too small for reciprocal cutoff {self.recip_cutoff}"
            )
        alpha = self.alpha
        freq = np.fft.fftfreq(m, 1.0 / m)
        n2 = freq[:, None, None] ** 2 + freq[None, :, None] ** 2 + freq[None, None, :] ** 2
        keep = (n2 > 0) & (n2 <= self.recip_cutoff**2)
        coef = np.zeros_like(n2)
        coef[keep] = np.exp(-(math.pi**2) * n2[keep] / alpha**2) / (4.0 * math.pi**2 * n2[keep])
        recip = np.real(np.fft.ifftn(coef)) * m**3

        idx = np.arange(-1, m // 2 + 2)
        wrapped = np.mod(idx, m)
        recip_oct = recip[np.ix_(wrapped, wrapped, wrapped)]
        h = 1.0 / m
        pts = _reduce(
            np.stack(np.meshgrid(idx * h, idx * h, idx * h, indexing="ij"), -1).reshape(-1, 3)
        )
        images = self._images(self.real_shells)
        far = ~np.all(images == 0.0, axis=1)
        images = images[far]
        real = np.empty(len(pts))
        for start in range(0, len(pts), 4096):
            p = pts[start : start + 4096]
            d = np.linalg.norm(p[:, None, :] + images[None], axis=-1)
            r0 = np.linalg.norm(p, axis=1)
            safe = np.where(r0 > 0, r0, 1.0)
            # origin image minus kappa*chi/r, both finite as r -> 0
            near = np.where(r0 > 0, -erf(alpha * r0) / (4.0 * math.pi * safe), -alpha / (2.0 * math.pi**1.5))
            smooth_sing = np.where(r0 > 0, KAPPA3 * (1.0 - _cutoff_np(r0)) / safe, 0.0)
            real[start : start + 4096] = (erfc(alpha * d) / (4.0 * math.pi * d)).sum(1) + near + smooth_sing
        table = real.reshape((len(idx),) * 3) + recip_oct - 1.0 / (4.0 * alpha**2)
        return table

    # -- tabulated evaluation ------------------------------------------------

    def __call__(self, x):
        """Tabulated g(x); ``x`` has shape (3,) or (n, 3)."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 1
        pts = np.ascontiguousarray(np.atleast_2d(x))
        red = _reduce(pts)
        if np.any(np.einsum("ij,ij->i", red, red) < 1e-26):
            raise SingularInputError("g is singular at the lattice points")
        out = torus_green_many(pts, self.table, self.table_size)
        return float(out[0]) if scalar else out

    # -- minimum ----------------------------------------------------------------

    def _search_minimum(self, grid=128, seed=0, refine=4):
        h = 1.0 / grid
        nodes = np.arange(grid // 2 + 1) * h
        pts = np.stack(np.meshgrid(nodes, nodes, nodes, indexing="ij"), -1).reshape(-1, 3)
        pts = pts[1:]  # drop the singular origin
        vals = torus_green_many(np.ascontiguousarray(pts), self.table, self.table_size)
        order = np.argsort(vals)[:refine]
        rng = np.random.default_rng(seed)
        best_val, best_x = np.inf, None
        for i in order:
            start = np.clip(pts[i] + rng.uniform(-0.25, 0.25, 3) * h, 0.0, 0.5)
            res = optimize.minimize(
                lambda y: float(self._ewald_sum(y[None, :], self.alpha, False)[0]),
                start,
                method="L-BFGS-B",
                bounds=[(h / 4, 0.5)] * 3,
                options={"ftol": 1e-15, "gtol": 1e-11},
            )
            if res.fun < best_val:
                best_val, best_x = float(res.fun), np.asarray(res.x)
        return -best_val, best_x

    def min_over_torus(self, grid=128, seed=0, return_minimizers=False):
        """Return m_pot = -min g by grid search refined with local descent.

        With ``return_minimizers`` the full orbit of the minimizer under the
        cubic symmetry group (reduced to [0, 1)^3) is returned as well; the
        orbit is closed under x -> -x.
        """
        m_pot, x = self._search_minimum(grid=grid, seed=seed)
        if not return_minimizers:
            return m_pot
        orbit = []
        for signs in np.array(np.meshgrid([1, -1], [1, -1], [1, -1])).T.reshape(-1, 3):
            for perm in ([0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]):
                y = np.mod(signs * x[perm], 1.0)
                y[np.isclose(y, 1.0, atol=1e-9)] = 0.0
                if not any(np.allclose(y, z, atol=1e-7) for z in orbit):
                    orbit.append(y)
        return m_pot, np.array(orbit)

    # -- smearing ---------------------------------------------------------------

    @staticmethod
    def _check_radius(r):
        if not 0.0 < r < 0.5:
            raise KernelDomainError(f"smearing radius must lie in (0, 1/2), got {r}")

    def smeared_kernel(self, x, r, times=2):
        """(g * gamma_r^{*times})(x) for times in {1, 2}.

        Uses the exact local decomposition ``g = kappa/|x| + |x|^2/6 + h``
        with h harmonic on the unit ball when the smearing support fits
        (``times * r < 1/2``); otherwise falls back to the Fourier series.
        At ``x = 0`` with ``times = 2`` this is the smeared self-energy.
        """
        self._check_radius(r)
        if times not in (1, 2):
            raise ValueError("times must be 1 or 2")
        x = _reduce(x)
        scalar = x.ndim == 1
        x = np.atleast_2d(x)
        if times * r < 0.5:
            s = np.linalg.norm(x, axis=1)
            profile = ball_potential(s, r) if times == 1 else double_ball_potential(s, r)
            reg = self.regular_part(x)
            out = reg + self.kappa * profile + times * r * r / 10.0
        else:
            out = self.smeared_spectral(x, r, times)
        return float(out[0]) if scalar else out

    def smeared_spectral(self, x, r, times=2, cutoff=None):
        """Fourier-series evaluation of (g * gamma_r^{*times})(x)."""
        self._check_radius(r)
        if cutoff is None:
            cutoff = 64 if times == 2 else 96
        x = np.atleast_2d(_reduce(x))
        xi, n2 = self._recip_vectors(cutoff)
        k = 2.0 * math.pi * np.sqrt(n2)
        coef = 2.0 * ball_transform(k * r) ** times / (4.0 * math.pi**2 * n2)
        out = np.empty(len(x))
        for start in range(0, len(x), 64):
            out[start : start + 64] = np.cos(2.0 * math.pi * (x[start : start + 64] @ xi.T)) @ coef
        return out

    def smeared_grid(self, r, m=64, times=2):
        """(g * gamma_r^{*times}) at the nodes i/m, computed by FFT."""
        self._check_radius(r)
        freq = np.fft.fftfreq(m, 1.0 / m)
        n2 = freq[:, None, None] ** 2 + freq[None, :, None] ** 2 + freq[None, None, :] ** 2
        coef = np.zeros_like(n2)
        nz = n2 > 0
        k = 2.0 * math.pi * np.sqrt(n2[nz])
        coef[nz] = ball_transform(k * r) ** times / (4.0 * math.pi**2 * n2[nz])
        return np.real(np.fft.ifftn(coef)) * m**3

    def grid_values(self, m=64):
        """Exact g at the nodes i/m (Ewald via FFT); the origin entry is +inf."""
        if m < 2 * self.recip_cutoff + 2:
            raise ValueError("grid too coarse for the reciprocal cutoff")
        alpha = self.alpha
        freq = np.fft.fftfreq(m, 1.0 / m)
        n2 = freq[:, None, None] ** 2 + freq[None, :, None] ** 2 + freq[None, None, :] ** 2
        keep = (n2 > 0) & (n2 <= self.recip_cutoff**2)
        coef = np.zeros_like(n2)
        coef[keep] = np.exp(-(math.pi**2) * n2[keep] / alpha**2) / (4.0 * math.pi**2 * n2[keep])
        recip = np.real(np.fft.ifftn(coef)) * m**3
        i = np.arange(m) / m
        pts = _reduce(np.stack(np.meshgrid(i, i, i, indexing="ij"), -1).reshape(-1, 3))
        images = self._images(self.real_shells)
        real = np.empty(len(pts))
        for start in range(0, len(pts), 4096):
            d = np.linalg.norm(pts[start : start + 4096, None, :] + images[None], axis=-1)
            with np.errstate(divide="ignore"):
                real[start : start + 4096] = (erfc(alpha * d) / (4.0 * math.pi * d)).sum(1)
        return real.reshape(m, m, m) + recip - 1.0 / (4.0 * alpha**2)

    def subharmonic_constant(self, r, m=64, times=2):
        """max over the grid nodes i/m of ((g * gamma_r^{*times}) - g) / r^2.

        When the smearing support fits (``times * r < 1/2``) the difference is
        ``kappa * (profile(|x|) - 1/|x|) + times * r^2 / 10`` exactly, so the
        maximization needs no kernel evaluations.  Larger radii go through the
        FFT route of :meth:`subharmonic_constant_spectral`.
        """
        self._check_radius(r)
        if times * r >= 0.5:
            return self.subharmonic_constant_spectral(r, max(m, 128), times)
        i = np.arange(m) / m
        pts = _reduce(np.stack(np.meshgrid(i, i, i, indexing="ij"), -1).reshape(-1, 3))
        s = np.linalg.norm(pts, axis=1)[1:]
        prof = ball_potential(s, r) if times == 1 else double_ball_potential(s, r)
        diff = self.kappa * (prof - 1.0 / s) + times * r * r / 10.0
        return float(diff.max() / r**2)

    def subharmonic_constant_spectral(self, r, m=64, times=2):
        """Same maximization with both terms computed by FFT on an m^3 grid."""
        smeared = self.smeared_grid(r, m, times)
        g = self.grid_values(m)
        diff = smeared - g
        diff[0, 0, 0] = -np.inf
        return float(diff.max() / r**2)

    # -- spectral helpers ---------------------------------------------------------

    @staticmethod
    def fourier_coefficient(xi):
        """Fourier coefficient of g at integer frequency xi (0 at xi = 0)."""
        xi = np.asarray(xi, dtype=float)
        n2 = np.sum(xi * xi, axis=-1)
        with np.errstate(divide="ignore"):
            return np.where(n2 > 0, 1.0 / (4.0 * math.pi**2 * np.where(n2 > 0, n2, 1.0)), 0.0)

    def quadratic_form(self, freqs, coeffs):
        """<phi, g * phi> for phi = sum_k c_k exp(2 pi i xi_k . x)."""
        coeffs = np.asarray(coeffs)
        return float(np.sum(np.abs(coeffs) ** 2 * self.fourier_coefficient(freqs)))

    def grid_mean(self, m=64):
        """Mean of g on cells centered at i/m; the singular cell is integrated
        analytically (kappa/r part exactly, regular part by its center value)."""
        g = self.grid_values(m)
        h = 1.0 / m
        g[0, 0, 0] = 0.0
        singular = self.kappa * 2.0 * h * h * UNIT_CUBE_INV_R + h**3 * self.g_reg0
        return float(g.sum() * h**3 + singular)

    def laplacian_fd(self, x, h=1.0 / 64, order=2, alpha=None):
        """Central finite-difference Laplacian of the Ewald g.

        ``order`` selects the stencil accuracy O(h^order) (2, 4 or 6).
        """
        weights = _FD_WEIGHTS[order]
        x = np.atleast_2d(np.asarray(x, dtype=float))
        acc = 3.0 * weights[0] * self.ewald(x, alpha)
        for k, w in enumerate(weights[1:], start=1):
            for axis in range(3):
                e = np.zeros(3)
                e[axis] = k * h
                acc = acc + w * (self.ewald(x + e, alpha) + self.ewald(x - e, alpha))
        return acc / (h * h)

    # -- serialization ------------------------------------------------------------

    def save(self, path):
        """Write the table to a versioned binary file."""
        payload = self.table.astype("<f8").tobytes()
        header = {
            "d": self.d,
            "M": self.table_size,
            "alpha": self.alpha,
            "real_shells": self.real_shells,
            "recip_cutoff": self.recip_cutoff,
            "cutoff_radius": CUTOFF_RADIUS,
            "g_reg0": self.g_reg0,
            "m_pot": self.m_pot,
            "minimizer": [float(v) for v in self.minimizer],
            "shape": list(self.table.shape),
            "sha256": hashlib.sha256(payload).hexdigest(),
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(TABLE_MAGIC)
            fh.write(struct.pack("<II", TABLE_VERSION, len(blob)))
            fh.write(blob)
            fh.write(payload)

    @classmethod
    def load(cls, path):
        data = Path(path).read_bytes()
        if data[:4] != TABLE_MAGIC:
            raise TableFormatError(f"{path}: not a kernel table")
        version, hlen = struct.unpack("<II", data[4:12])
        if version != TABLE_VERSION:
            raise TableFormatError(f"{path}: unsupported table version {version}")
        header = json.loads(data[12 : 12 + hlen])
        payload = data[12 + hlen :]
        if hashlib.sha256(payload).hexdigest() != header["sha256"]:
            raise TableFormatError(f"{path}: checksum mismatch")
        if header["cutoff_radius"] != CUTOFF_RADIUS:
            raise TableFormatError(f"{path}: table built with a different cutoff")
        table = np.frombuffer(payload, dtype="<f8").reshape(header["shape"]).copy()
        return cls(
            d=header["d"],
            alpha=header["alpha"],
            table_size=header["M"],
            table=table,
            _meta={"m_pot": header["m_pot"], "minimizer": header["minimizer"]},
        )


# ---------------------------------------------------------------------------
# free-space kernel
# ---------------------------------------------------------------------------


class FreeKernel:
    """Free-space Coulomb kernel kappa_d |x|^(2-d) with Laplacian g = -delta_0."""

    def __init__(self, d=3):
        self.d = int(d)
        self.kappa = coulomb_constant(self.d)

    def __repr__(self):
        return f"FreeKernel(d={self.d})"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        if np.any(r == 0.0):
            raise SingularInputError("free Coulomb kernel is singular at 0")
        out = self.kappa * r ** (2.0 - self.d)
        return float(out) if np.ndim(out) == 0 else out

    eval_free_green = __call__

    def smeared(self, x, r, times=2):
        """Closed-form (g * gamma_r^{*times})(x) in d = 3."""
        if self.d != 3:
            raise UnsupportedDimensionError("closed-form smearing only for d = 3")
        if r <= 0:
            raise KernelDomainError("smearing radius must be positive")
        s = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        prof = ball_potential(s, r) if times == 1 else double_ball_potential(s, r)
        out = self.kappa * prof
        return float(out) if np.ndim(out) == 0 else out

    def laplacian_fd(self, x, h=1e-3):
        x = np.asarray(x, dtype=float)
        acc = -2.0 * self.d * self(x)
        for axis in range(self.d):
            e = np.zeros(self.d)
            e[axis] = h
            acc = acc + self(x + e) + self(x - e)
        return acc / (h * h)
