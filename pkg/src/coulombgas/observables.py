"""Linear statistics, potential fields and empirical moments.

On the torus ``P mu_X(x) = sum_k g(x - x_k)``; in R^3 it is
``sum_k g(x - x_k) + sum_k V(x_k) + N V(x)``.  Both are sampled at cell
centres of a uniform grid.  L^1 norms go through the negative part, which
is bounded (torus) so midpoint quadrature converges without special care
near the particles.
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .kernel import box_inverse_distance, torus_green
from .system import _free_green


class DomainMismatchError(ValueError):
    pass


# -- test functions -------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """Smooth test function with closed-form Laplacian.

    Attributes
    ----------
    name : str
        Registry name, e.g. ``"cos:1,0,0"`` or ``"bump:0.3"``.
    domain : str
        ``"torus"`` or ``"euclidean"``.
    laplacian_sup : float
        ``sup |Laplacian phi|``.
    mean : float
        Integral of phi against the reference measure (Lebesgue on the
        torus, mu_V in R^3); subtracted N times by :func:`linear_statistic`.
    """

    __test__ = False  # not a pytest class

    name: str
    domain: str
    kind: str
    params: tuple
    laplacian_sup: float
    mean: float = 0.0
    support_radius: float = math.inf

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "cos":
            k = np.asarray(self.params, dtype=float)
            return np.cos(2.0 * math.pi * (x @ k))
        center, rho = np.asarray(self.params[:3]), self.params[3]
        u = 1.0 - np.sum((x - center) ** 2, axis=-1) / rho**2
        return np.where(u > 0, u, 0.0) ** 3

    def laplacian(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "cos":
            k = np.asarray(self.params, dtype=float)
            return -4.0 * math.pi**2 * float(k @ k) * np.cos(2.0 * math.pi * (x @ k))
        center, rho = np.asarray(self.params[:3]), self.params[3]
        u = 1.0 - np.sum((x - center) ** 2, axis=-1) / rho**2
        # d/ds of u^3 radial, d = 3: (24 u - 42 u^2) / rho^2
        return np.where(u > 0, (24.0 * u - 42.0 * u * u) / rho**2, 0.0)


def torus_cosine(k=(1, 0, 0)):
    """``cos(2 pi k.x)`` on the torus; mean zero, ``sup|Laplacian| = 4 pi^2 |k|^2``."""
    k = tuple(int(v) for v in k)
    if len(k) != 3 or not any(k):
        raise ValueError("k must be a nonzero integer 3-vector")
    name = "cos:" + ",".join(str(v) for v in k)
    return TestFunction(name, "torus", "cos", k, 4.0 * math.pi**2 * sum(v * v for v in k), 0.0)


def euclidean_bump(equilibrium, radius=0.3, center=(0.0, 0.0, 0.0)):
    """``(1 - |x - c|^2 / rho^2)^3`` supported strictly inside Sigma.

    ``<phi, mu_V> = density * 64 pi rho^3 / 315`` in closed form.
    """
    center = tuple(float(c) for c in center)
    if np.linalg.norm(center) + radius >= equilibrium.radius:
        raise ValueError("bump support must lie strictly inside the equilibrium support")
    mean = equilibrium.density * 64.0 * math.pi * radius**3 / 315.0
    name = f"bump:{radius!r}"
    if any(center):
        name += "@" + ",".join(repr(c) for c in center)
    return TestFunction(name, "euclidean", "bump", center + (float(radius),), 18.0 / radius**2, mean, radius)


_COS = re.compile(r"^cos:(-?\d+),(-?\d+),(-?\d+)$")
_BUMP = re.compile(r"^bump:([0-9.eE+-]+)$")


def make_test_function(name, equilibrium=None):
    """Registry lookup by string name: ``cos:k1,k2,k3`` or ``bump:radius``."""
    m = _COS.match(name)
    if m:
        return torus_cosine(tuple(int(v) for v in m.groups()))
    m = _BUMP.match(name)
    if m:
        if equilibrium is None:
            raise ValueError("bump test functions need equilibrium data")
        return euclidean_bump(equilibrium, float(m.group(1)))
    raise ValueError(f"unknown test function {name!r}")


def centered_sums(phi, points):
    """``sum_j phi(x_j) - N <phi, reference>`` over the last two axes (..., N, 3)."""
    points = np.asarray(points, dtype=float)
    n = points.shape[-2]
    return np.sum(phi(points), axis=-1) - n * phi.mean


def linear_statistic(config, phi):
    """Centered linear statistic ``sum_j phi(x_j) - N <phi, reference>``."""
    if config.domain != phi.domain:
        raise DomainMismatchError(f"{phi.name} is a {phi.domain} test function, configuration is {config.domain}")
    return float(centered_sums(phi, config.positions))


# -- potential field ------------------------------------------------------------------


@njit(cache=True)
def _torus_source_fields(pos, table, m, grid):
    """g(c - x_k) at the cell centres c, one row per source k."""
    n = pos.shape[0]
    out = np.empty((n, grid * grid * grid))
    h = 1.0 / grid
    for k in range(n):
        i = 0
        for a in range(grid):
            ca = (a + 0.5) * h - pos[k, 0]
            for b in range(grid):
                cb = (b + 0.5) * h - pos[k, 1]
                for c in range(grid):
                    out[k, i] = torus_green(ca, cb, (c + 0.5) * h - pos[k, 2], table, m)
                    i += 1
    return out


@njit(cache=True)
def _free_source_fields(pos, centers, kappa):
    n = pos.shape[0]
    out = np.empty((n, centers.shape[0]))
    for k in range(n):
        for i in range(centers.shape[0]):
            out[k, i] = _free_green(centers[i, 0] - pos[k, 0], centers[i, 1] - pos[k, 1],
                                    centers[i, 2] - pos[k, 2], kappa)
    return out


@dataclass
class FieldGrid:
    """P mu_X sampled at the centres of a uniform grid.

    Attributes
    ----------
    m : int
        Cells per axis.
    centers : ndarray, shape (K, 3)
        Cell centres that carry weight.
    values : ndarray, shape (K,)
        P mu_X at the centres.
    weights : ndarray, shape (K,)
        Quadrature weights (cell volume, or mu_V mass of the cell).
    measure : str
        ``"lebesgue"`` or ``"mu_v"``.
    singular : ndarray of bool
        Cells containing a particle.
    sources : ndarray, shape (N, K), optional
        Per-particle contributions ``g(c - x_k)``, kept for restricted fields.
    correction : ndarray, shape (K,), optional
        Cell average minus centre value of the ``kappa/r`` singularity on
        the cells next to each particle.  ``values + correction`` is used by
        linear functionals (integrals, pairings), whose midpoint rule would
        otherwise be dominated by cells whose centre is close to a particle.
    """

    m: int
    centers: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    domain: str
    measure: str = "lebesgue"
    singular: np.ndarray = None
    sources: np.ndarray = None
    confinement: np.ndarray = None
    cell_volume: float = 0.0
    meta: dict = field(default_factory=dict)
    correction: np.ndarray = None

    def scaled(self, c):
        corr = None if self.correction is None else c * self.correction
        return FieldGrid(self.m, self.centers, c * self.values, self.weights, self.domain, self.measure,
                         self.singular, None, None, self.cell_volume, dict(self.meta), corr)

    @property
    def averaged(self):
        """Values with singular cells replaced by their cell averages."""
        return self.values if self.correction is None else self.values + self.correction

    @property
    def negative_part(self):
        return np.minimum(self.values, 0.0)

    def integral(self, f=None):
        vals = self.averaged if f is None else f
        return float(np.dot(self.weights, vals))

    def restricted(self, j):
        """Field of the configuration with particle j removed, P mu_{X, hat j}."""
        if self.sources is None:
            raise ValueError("field was computed without per-source data")
        vals = self.values - self.sources[j]
        if self.domain == "euclidean":
            # drop V(x_j) and one copy of V(x)
            vals = vals - self.meta["v_particles"][j] - self.confinement
        return vals


def _cell_index(pos, lo, h, m):
    idx = np.floor((pos - lo) / h).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < m), axis=1)
    return idx[ok]


def potential_field(config, m=32, measure="lebesgue", equilibrium=None, box=None, keep_sources=False,
                    subsample=4):
    """Evaluate P mu_X at the centres of an ``m^3`` grid.

    Parameters
    ----------
    config : Configuration
    m : int
        Cells per axis (>= 16 for production use; smaller is allowed in tests).
    measure : {"lebesgue", "mu_v"}
        Euclidean only.  ``"mu_v"`` grids the bounding cube of Sigma and
        weights each cell by its mu_V mass (boundary cells by ``subsample^3``
        sub-points, then normalized to total mass 1).  ``"lebesgue"`` grids
        ``box`` (half-width) with volume weights.
    """
    if m < 2:
        raise ValueError("grid must have at least 2 cells per axis")
    n = config.n
    if config.domain == "torus":
        if measure != "lebesgue":
            raise DomainMismatchError("torus fields use Lebesgue measure")
        h = 1.0 / m
        axis = (np.arange(m) + 0.5) * h
        centers = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), -1).reshape(-1, 3)
        k = config.kernel
        if n:
            src = _torus_source_fields(config.positions, k.table, k.table_size, m)
            vals = src.sum(axis=0)
        else:
            src = np.zeros((0, m**3))
            vals = np.zeros(m**3)
        weights = np.full(m**3, h**3)
        sing = np.zeros(m**3, dtype=bool)
        idx = _cell_index(config.positions, 0.0, h, m)
        sing[(idx[:, 0] * m + idx[:, 1]) * m + idx[:, 2]] = True
        corr = singular_correction(config.positions, centers, h, k.kappa, periodic=True)
        return FieldGrid(m, centers, vals, weights, "torus", "lebesgue", sing, src if keep_sources else None,
                         None, h**3, {}, corr)

    # Euclidean
    if measure == "mu_v":
        if equilibrium is None:
            raise ValueError("mu_V weights need equilibrium data")
        half = equilibrium.radius
    elif measure == "lebesgue":
        half = float(box) if box is not None else 2.0 * (equilibrium.radius if equilibrium else 0.5)
    else:
        raise ValueError(f"unknown measure {measure!r}")
    h = 2.0 * half / m
    axis = -half + (np.arange(m) + 0.5) * h
    centers = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), -1).reshape(-1, 3)
    if measure == "mu_v":
        weights = mu_v_weights(centers, h, equilibrium, subsample)
        keep = weights > 0
        centers, weights = centers[keep], weights[keep]
    else:
        weights = np.full(len(centers), h**3)
    pot = config.potential
    v_particles = np.asarray(pot(config.positions), dtype=float).reshape(n)
    conf = np.asarray(pot(centers), dtype=float)
    src = _free_source_fields(config.positions, centers, config.kernel.kappa) if n else np.zeros((0, len(centers)))
    vals = src.sum(axis=0) + v_particles.sum() + n * conf
    sing = np.zeros(len(centers), dtype=bool)
    for p in config.positions:
        sing |= np.all(np.abs(centers - p) <= h / 2, axis=1)
    corr = singular_correction(config.positions, centers, h, config.kernel.kappa, periodic=False)
    return FieldGrid(m, centers, vals, weights, "euclidean", measure, sing, src if keep_sources else None,
                     conf, h**3, {"v_particles": v_particles, "half_width": half,
                                 "density": equilibrium.density if equilibrium else None}, corr)


def singular_correction(positions, centers, h, kappa, periodic=False):
    """Per-cell ``kappa (<1/r>_cell - 1/r(centre))`` on cells within 1.5 h of a particle.

    On the torus the smooth remainder of g near 0 is left to the midpoint
    rule; the cutoff is flat to fourth order there.
    """
    corr = np.zeros(len(centers))
    for x in np.atleast_2d(positions):
        d = centers - x
        if periodic:
            d -= np.round(d)
        near = np.all(np.abs(d) < 1.5 * h, axis=1)
        if not np.any(near):
            continue
        dn = d[near]
        avg = box_inverse_distance(dn - 0.5 * h, dn + 0.5 * h) / h**3
        r = np.linalg.norm(dn, axis=1)
        with np.errstate(divide="ignore"):
            corr[near] += kappa * (avg - 1.0 / np.where(r > 0, r, np.inf))
    return corr


def _ball_cell_fractions(centers, h, radius, sub):
    """Fraction of each cube cell inside the ball; exact 0/1 away from the sphere."""
    r = np.linalg.norm(centers, axis=1)
    half_diag = h * math.sqrt(3.0) / 2.0
    frac = np.where(r + half_diag <= radius, 1.0, 0.0)
    edge = np.abs(r - radius) < half_diag
    if np.any(edge):
        o = (np.arange(sub) + 0.5) / sub - 0.5
        offs = np.stack(np.meshgrid(o, o, o, indexing="ij"), -1).reshape(-1, 3) * h
        pts = centers[edge][:, None, :] + offs[None]
        frac[edge] = np.mean(np.linalg.norm(pts, axis=2) <= radius, axis=1)
    return frac


def mu_v_weights(centers, h, equilibrium, subsample=4):
    """mu_V mass of each cube cell (side h) around ``centers``, normalized to 1."""
    w = _ball_cell_fractions(centers, h, equilibrium.radius, subsample) * equilibrium.density * h**3
    return w / w.sum()


def negative_part_integral(field):
    """Integral of (P mu_X)_- against the grid weights."""
    return float(np.dot(field.weights, field.negative_part))


def l1_norm(field, zeta_statistic=None):
    """L^1 norm of P mu_X through its negative part.

    Torus: ``-2 int (P mu_X)_-`` (uses that P mu_X has mean zero).
    Euclidean with mu_V weights: ``<zeta, mu_X> - 2 int (P mu_X)_- d mu_V``,
    which needs ``zeta_statistic``.
    """
    neg = negative_part_integral(field)
    if field.domain == "torus":
        return -2.0 * neg
    if field.measure != "mu_v":
        raise DomainMismatchError("Euclidean L^1 norms are taken against mu_V")
    if zeta_statistic is None:
        raise ValueError("the Euclidean L^1 identity needs <zeta, mu_X>")
    return float(zeta_statistic) - 2.0 * neg


def l1_norm_direct(field):
    """Plain midpoint quadrature of |P mu_X| (reference for the identity)."""
    return float(np.dot(field.weights, np.abs(field.averaged)))


def duality_pairing(field, phi):
    """Grid quadrature of ``<Laplacian phi, P mu_X>`` against Lebesgue measure."""
    if field.domain != phi.domain:
        raise DomainMismatchError("test function and field live on different domains")
    lap = phi.laplacian(field.centers)
    vals = field.averaged
    if field.measure == "mu_v":
        # weights carry the density; divide it back out (phi is supported in Sigma)
        vol = field.weights / field.meta["density"]
        return float(np.dot(vol, lap * vals))
    return float(np.dot(field.weights, lap * vals))


# -- moments --------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentEstimate:
    """Empirical exponential moment with a block-jackknife error.

    ``log_value`` is always filled; ``value`` is ``inf`` when the estimate
    had to be formed in the log domain.
    """

    value: float
    stderr: float
    log_value: float
    log_stderr: float
    n: int
    log_domain: bool = False


def _blocks(n, n_blocks):
    n_blocks = max(2, min(n_blocks, n))
    return np.array_split(np.arange(n), n_blocks)


def exp_moment(values, rate, n_blocks=20, min_samples=100, ess=None):
    """Estimate ``E[exp(rate * v)]`` from a trace with a block jackknife."""
    v = np.asarray(values, dtype=float).ravel()
    if len(v) == 0:
        raise ValueError("empty trace")
    eff = ess if ess is not None else len(v)
    if eff < min_samples:
        raise ValueError(f"need at least {min_samples} effective samples, got {eff:.1f}")
    if rate == 0.0:
        return MomentEstimate(1.0, 0.0, 0.0, 0.0, len(v))
    a = rate * v
    shift = float(a.max())
    log_domain = shift > 500.0
    w = np.exp(a - shift)
    total = w.sum()
    log_mean = shift + math.log(total / len(v))
    blocks = _blocks(len(v), n_blocks)
    b = len(blocks)
    loo = np.array([shift + math.log((total - w[idx].sum()) / (len(v) - len(idx))) for idx in blocks])
    log_se = math.sqrt((b - 1) / b * np.sum((loo - loo.mean()) ** 2))
    if log_domain:
        return MomentEstimate(math.inf, math.inf, log_mean, log_se, len(v), True)
    mean = math.exp(log_mean)
    loo_lin = np.exp(loo)
    se = math.sqrt((b - 1) / b * np.sum((loo_lin - loo_lin.mean()) ** 2))
    return MomentEstimate(mean, se, log_mean, log_se, len(v))


def mean_with_error(values, n_blocks=20):
    """Sample mean with a block-jackknife standard error."""
    v = np.asarray(values, dtype=float).ravel()
    blocks = _blocks(len(v), n_blocks)
    b = len(blocks)
    total = v.sum()
    loo = np.array([(total - v[idx].sum()) / (len(v) - len(idx)) for idx in blocks])
    return float(v.mean()), float(math.sqrt((b - 1) / b * np.sum((loo - loo.mean()) ** 2)))


def tail_probability(values, threshold, ess=None):
    """Exceedance frequency of ``|v| >= threshold`` with an ESS-based error bar."""
    v = np.abs(np.asarray(values, dtype=float).ravel())
    n = len(v)
    if n == 0:
        raise ValueError("empty trace")
    p = float(np.mean(v >= threshold))
    eff = min(float(ess), n) if ess is not None else n
    if p * eff < 5:
        warnings.warn("fewer than 5 expected exceedances; error bar unreliable", RuntimeWarning, stacklevel=2)
    return p, math.sqrt(p * (1.0 - p) / eff)


def torus_lattice(n_side):
    """Simple cubic lattice with ``n_side^3`` points on the torus."""
    a = np.arange(n_side) / n_side
    return np.stack(np.meshgrid(a, a, a, indexing="ij"), -1).reshape(-1, 3)
