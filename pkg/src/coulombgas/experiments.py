"""Declarative experiments: config files, scaling sweeps, reports.

Config files are INI (``configparser``) with a fixed schema; unknown
sections or keys are errors.  Every output file starts with a schema row,
and floats are written with ``repr`` so CSVs round-trip exactly.
"""
from __future__ import annotations

import configparser
import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import effective_sample_size, split_rhat
from .equilibrium import solve_quadratic_equilibrium
from .groundstate import (
    certify_euclidean_lower_bound,
    certify_lower_bound,
    minimize_energy,
    regularized_energy,
    regularized_ground_state,
)
from .kernel import FreeKernel, TorusKernel
from .observables import centered_sums, exp_moment, linear_statistic, make_test_function
from .sampler import run_chain
from .system import Configuration

SWEEP_SCHEMA = "coulombgas-sweep/1"
CERTIFICATE_SCHEMA = "coulombgas-certificate/1"
THREADS_ENV = "COULOMB_THREADS"
KINDS = ("kernel-check", "sample", "ground-state", "sweep", "analyze")
REFERENCE_SLOPE = 1.0 / 3.0


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 4)."""


class InequalityViolation(RuntimeError):
    """A certified inequality failed beyond tolerance (CLI exit code 3)."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


class FitError(ValueError):
    pass


# -- config --------------------------------------------------------------------------


def _int_list(text):
    return [int(v) for v in text.replace(",", " ").split()]


def _float_list(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _str_list(text):
    return [v.strip() for v in text.split(";") if v.strip()]


def _opt_float(text):
    return None if text.strip().lower() in ("", "none") else float(text)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default, description)
SCHEMA = {
    "experiment": {
        "kind": (str, "sweep", "one of " + ", ".join(KINDS)),
        "seed": (int, 0, "master seed"),
        "output": (str, "results", "output directory"),
        "threads": (int, 1, "worker processes"),
        "input": (str, "", "sweep CSV read by analyze"),
    },
    "system": {
        "domain": (str, "torus", "torus or euclidean"),
        "d": (int, 3, "dimension (only 3 is implemented)"),
        "n": (_int_list, [27, 64, 125, 216], "particle numbers, ascending"),
        "beta": (float, 1.0, "inverse temperature (used when beta_scale is none)"),
        "beta_scale": (_opt_float, None, "b in beta = b * N^beta_exponent"),
        "beta_exponent": (float, -1.0 / 3.0, "exponent of the beta schedule"),
        "table_size": (int, 128, "torus kernel table resolution"),
    },
    "sampler": {
        "sweeps": (int, 4000, "sweeps per chain including burn-in"),
        "burn_in": (int, 1000, "discarded sweeps (step size tuned here)"),
        "thin": (int, 1, "record every thin-th sweep"),
        "chains": (int, 4, "independent chains per N"),
        "proposal": (str, "gaussian", "gaussian or uniform (torus)"),
        "rhat_threshold": (float, 1.1, "split R-hat convergence threshold"),
    },
    "observables": {
        "test_functions": (_str_list, ["cos:1,0,0"], "semicolon-separated registry names"),
        "grid": (int, 32, "potential-field grid per axis"),
        "baseline_sets": (int, 10000, "i.i.d. point sets per N for the baseline"),
    },
    "groundstate": {
        "enabled": (_bool, False, "run the optimizer alongside certificates"),
        "seeds": (_int_list, [0, 1, 2], "annealing restarts"),
        "sweeps": (int, 2000, "annealing sweeps per restart"),
        "certificate_grid": (int, 64, "grid for the subharmonicity constant"),
    },
    "audit": {
        "enabled": (_bool, False, "run the inequality audit in sample runs"),
        "refine_every": (int, 10, "compute the 2M grid on every k-th sample"),
        "lambdas": (_float_list, [1.0, 2.0, 4.0], "tail thresholds in units of sup|Laplacian phi|"),
    },
}


def schema_text():
    """Human-readable description of the config schema."""
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key, (_, default, doc) in keys.items():
            if isinstance(default, list):
                default = ", ".join(str(v) for v in default) if key != "test_functions" else "; ".join(default)
            lines.append(f"{key} = {default}    # {doc}")
        lines.append("")
    return "\n".join(lines)


@dataclass
class ExperimentSpec:
    """Flattened, validated experiment description."""

    kind: str = "sweep"
    seed: int = 0
    output: str = "results"
    threads: int = 1
    input: str = ""
    domain: str = "torus"
    d: int = 3
    n: list = field(default_factory=lambda: [27, 64, 125, 216])
    beta: float = 1.0
    beta_scale: float = None
    beta_exponent: float = -1.0 / 3.0
    table_size: int = 128
    sweeps: int = 4000
    burn_in: int = 1000
    thin: int = 1
    chains: int = 4
    proposal: str = "gaussian"
    rhat_threshold: float = 1.1
    test_functions: list = field(default_factory=lambda: ["cos:1,0,0"])
    grid: int = 32
    baseline_sets: int = 10000
    gs_enabled: bool = False
    gs_seeds: list = field(default_factory=lambda: [0, 1, 2])
    gs_sweeps: int = 2000
    certificate_grid: int = 64
    audit_enabled: bool = False
    refine_every: int = 10
    lambdas: list = field(default_factory=lambda: [1.0, 2.0, 4.0])

    def beta_for(self, n):
        if self.beta_scale is not None:
            return self.beta_scale * n**self.beta_exponent
        return self.beta

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.domain not in ("torus", "euclidean"):
            raise ConfigError(f"unknown domain {self.domain!r}")
        if self.d != 3:
            raise ConfigError("only d = 3 is implemented")
        if self.proposal not in ("gaussian", "uniform"):
            raise ConfigError(f"unknown proposal {self.proposal!r}")
        if self.proposal == "uniform" and self.domain != "torus":
            raise ConfigError("uniform proposals need the torus")
        if not self.n or any(v < 1 for v in self.n):
            raise ConfigError("N list must contain positive integers")
        if list(self.n) != sorted(self.n):
            raise ConfigError("N list must be sorted ascending")
        for name in ("sweeps", "thin", "chains", "grid", "baseline_sets", "threads", "table_size",
                     "gs_sweeps", "certificate_grid", "refine_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.burn_in < 0 or self.burn_in >= self.sweeps:
            raise ConfigError("need 0 <= burn_in < sweeps")
        for n in self.n:
            b = self.beta_for(n)
            if not (b >= 0.0 and math.isfinite(b)):
                raise ConfigError(f"beta must be finite and nonnegative (N={n})")
            if self.domain == "euclidean" and (n < 2 or b < 1.0 / (n - 1)):
                raise ConfigError(f"Euclidean runs need N >= 2 and beta >= 1/(N-1) (N={n}, beta={b})")
        eq = solve_quadratic_equilibrium() if self.domain == "euclidean" else None
        for name in self.test_functions:
            try:
                phi = make_test_function(name, eq)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            if phi.domain != self.domain:
                raise ConfigError(f"test function {name} does not live on the {self.domain}")
        return self


_FLAT = {("groundstate", "enabled"): "gs_enabled", ("groundstate", "seeds"): "gs_seeds",
         ("groundstate", "sweeps"): "gs_sweeps", ("audit", "enabled"): "audit_enabled"}


def parse_config(text, overrides=None):
    """Parse INI text into a validated :class:`ExperimentSpec`."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            conv = SCHEMA[sec][key][0]
            try:
                values[_FLAT.get((sec, key), key)] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}") from None
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    return ExperimentSpec(**values).validate()


def load_config(path, overrides=None):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides)


def resolve_threads(requested=None):
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from None
    return max(1, int(requested or 1))


# -- fitting ---------------------------------------------------------------------------


def wls_slope(n, std, stderr):
    """Weighted least-squares slope of log(std) against log(N).

    Returns (slope, intercept, slope_se).  Refuses fewer than 4 points.
    """
    n, std, stderr = (np.asarray(a, dtype=float) for a in (n, std, stderr))
    if len(n) < 4:
        raise FitError(f"need at least 4 values of N for a slope fit, got {len(n)}")
    x = np.log(n)
    y = np.log(std)
    se = stderr / std
    if np.any(se <= 0) or not np.all(np.isfinite(se)):
        raise FitError("error bars must be positive and finite")
    w = 1.0 / se**2
    a = np.stack([np.ones_like(x), x], 1)
    cov = np.linalg.inv(a.T @ (w[:, None] * a))
    coef = cov @ (a.T @ (w * y))
    return float(coef[1]), float(coef[0]), float(math.sqrt(cov[1, 1]))


# -- sweeps ------------------------------------------------------------------------------


@dataclass
class SweepRow:
    n: int
    beta: float
    mean: float
    std: float
    stderr: float
    ess: float
    rhat: float
    acceptance: float
    baseline_std: float
    baseline_stderr: float
    bound: float = math.nan
    h_opt: float = math.nan
    log_zeta_moment: float = math.nan
    log_zeta_moment_se: float = math.nan


@dataclass
class ScalingResult:
    """Per-N fluctuation statistics with slope fits for chains and baseline."""

    test_function: str
    domain: str
    rows: list
    slope: float = math.nan
    slope_se: float = math.nan
    baseline_slope: float = math.nan
    baseline_se: float = math.nan
    converged: bool = True
    traces: dict = field(default_factory=dict)

    @property
    def slope_ci(self):
        return (self.slope - 1.96 * self.slope_se, self.slope + 1.96 * self.slope_se)

    @property
    def baseline_ci(self):
        return (self.baseline_slope - 1.96 * self.baseline_se, self.baseline_slope + 1.96 * self.baseline_se)

    def fit(self):
        rows = self.rows
        if len(rows) >= 4:
            self.slope, _, self.slope_se = wls_slope([r.n for r in rows], [r.std for r in rows],
                                                     [r.stderr for r in rows])
            self.baseline_slope, _, self.baseline_se = wls_slope(
                [r.n for r in rows], [r.baseline_std for r in rows], [r.baseline_stderr for r in rows])
        return self


_KERNELS = {}


def _kernel(domain, table_size=128):
    if domain == "euclidean":
        return FreeKernel(3)
    key = ("torus", table_size)
    if key not in _KERNELS:
        _KERNELS[key] = TorusKernel(3, table_size=table_size)
    return _KERNELS[key]


def chain_id_for(n, c):
    return 1000 * int(n) + int(c)


def initial_configuration(spec, n, chain_id, kernel=None, equilibrium=None):
    """Perturbed cubic lattice on the torus; i.i.d. mu_V samples in R^3."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed, spawn_key=(chain_id, 1))))
    kernel = kernel or _kernel(spec.domain, spec.table_size)
    if spec.domain == "torus":
        side = math.ceil(n ** (1.0 / 3.0) - 1e-9)
        a = np.arange(side) / side
        lat = np.stack(np.meshgrid(a, a, a, indexing="ij"), -1).reshape(-1, 3)
        pts = lat[rng.permutation(len(lat))[:n]] + rng.uniform(-0.1, 0.1, (n, 3)) / side
        return Configuration(pts, kernel)
    eq = equilibrium or solve_quadratic_equilibrium()
    return Configuration(eq.sample(n, rng), kernel, eq.potential)


def _chain_task(args):
    spec, n, c = args
    kernel = _kernel(spec.domain, spec.table_size)
    eq = solve_quadratic_equilibrium() if spec.domain == "euclidean" else None
    phis = [make_test_function(name, eq) for name in spec.test_functions]
    cid = chain_id_for(n, c)
    cfg = initial_configuration(spec, n, cid, kernel, eq)
    obs = {phi.name: (lambda conf, phi=phi: linear_statistic(conf, phi)) for phi in phis}
    guard = None
    if eq is not None:
        obs["zeta"] = lambda conf: eq.zeta_statistic(conf.positions)
        bound = certify_euclidean_lower_bound(n, eq).bound

        def check_bound(conf, sweep):
            val = regularized_energy(conf, eq)
            if val < bound - 1e-9 * max(1.0, abs(bound)):
                raise InequalityViolation(
                    f"H - N<zeta, mu_X> = {val!r} below the certified bound {bound!r} at sweep {sweep}",
                    snapshot=conf.to_csv(spec.seed, sweep))

        guard = check_bound

    res = run_chain(cfg, spec.beta_for(n), spec.sweeps, spec.burn_in, spec.thin, seed=spec.seed, chain_id=cid,
                    observables=obs, proposal=spec.proposal, guard=guard)
    return {
        "n": n,
        "chain": c,
        "trace_csv": res.trace_csv(header=False),
        "observables": {k: v for k, v in res.observables.items()},
        "energy": res.energy,
        "acceptance": res.acceptance,
        "sigma": res.sigma,
    }


def run_tasks(func, tasks, threads=1):
    """Map ``func`` over tasks, in order, optionally on a process pool."""
    if threads <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, tasks))


def run_chains(spec, threads=None):
    """Run every (N, chain) task; results grouped by N in chain order."""
    threads = resolve_threads(threads if threads is not None else spec.threads)
    tasks = [(spec, n, c) for n in spec.n for c in range(spec.chains)]
    results = run_tasks(_chain_task, tasks, threads)
    by_n = {}
    for r in sorted(results, key=lambda r: (r["n"], r["chain"])):
        by_n.setdefault(r["n"], []).append(r)
    return by_n


def baseline_statistics(spec, phi, n, equilibrium=None):
    """Centered statistic on ``baseline_sets`` i.i.d. point sets of size n."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed, spawn_key=(999_999, n))))
    out = np.empty(spec.baseline_sets)
    chunk = max(1, 200_000 // n)
    for start in range(0, spec.baseline_sets, chunk):
        m = min(chunk, spec.baseline_sets - start)
        if spec.domain == "torus":
            pts = rng.random((m, n, 3))
        else:
            pts = equilibrium.sample(m * n, rng).reshape(m, n, 3)
        out[start : start + m] = centered_sums(phi, pts)
    return out


def pooled_std(x):
    """Standard deviation pooled over chains, with ESS-based error."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    std = float(np.std(x, ddof=1))
    ess = effective_sample_size(x) if x.shape[1] >= 4 else float(x.size)
    return float(np.mean(x)), std, std / math.sqrt(2.0 * ess), ess


def run_sweep(spec, threads=None, chains=None):
    """Fluctuation scaling sweep; returns a :class:`ScalingResult` per test function.

    ``chains`` may carry precomputed :func:`run_chains` output.
    """
    by_n = chains if chains is not None else run_chains(spec, threads)
    eq = solve_quadratic_equilibrium() if spec.domain == "euclidean" else None
    kernel = _kernel(spec.domain, spec.table_size)
    certs = {}
    for n in spec.n:
        if spec.domain == "torus":
            cert = certify_lower_bound(n, kernel, spec.certificate_grid)
            if spec.gs_enabled:
                cert.h_opt = minimize_energy(n, kernel, seeds=spec.gs_seeds, sweeps=spec.gs_sweeps).energy
        else:
            cert = certify_euclidean_lower_bound(n, eq)
            if spec.gs_enabled:
                cert.h_opt = regularized_ground_state(n, eq, seeds=spec.gs_seeds, sweeps=spec.gs_sweeps).energy
        certs[n] = cert
    results = []
    for name in spec.test_functions:
        phi = make_test_function(name, eq)
        rows = []
        converged = True
        traces = {}
        for n in spec.n:
            runs = by_n[n]
            x = np.array([r["observables"][phi.name] for r in runs])
            traces[n] = x
            mean, std, se, ess = pooled_std(x)
            rhat = split_rhat(x) if x.shape[1] >= 4 else math.inf
            if not (rhat <= spec.rhat_threshold):
                converged = False
            base = baseline_statistics(spec, phi, n, eq)
            bstd = float(np.std(base, ddof=1))
            bse = bstd / math.sqrt(2.0 * len(base))
            row = SweepRow(n, spec.beta_for(n), mean, std, se, ess, rhat,
                           float(np.mean([r["acceptance"] for r in runs])), bstd, bse,
                           certs[n].bound, certs[n].h_opt)
            if eq is not None:
                z = np.concatenate([r["observables"]["zeta"] for r in runs])
                mom = exp_moment(z, 0.5 * spec.beta_for(n) * n, min_samples=1)
                row.log_zeta_moment, row.log_zeta_moment_se = mom.log_value, mom.log_stderr
            rows.append(row)
        res = ScalingResult(phi.name, spec.domain, rows, converged=converged, traces=traces)
        try:
            res.fit()
        except FitError:
            pass
        results.append(res)
    return results


# -- reports ---------------------------------------------------------------------------------

SWEEP_COLUMNS = ["N", "beta", "mean", "std", "stderr", "ESS", "rhat", "acceptance", "baseline_std",
                 "baseline_stderr", "slope", "slope_ci_lo", "slope_ci_hi", "baseline_slope", "B_N", "H_opt",
                 "log_zeta_moment"]


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def sweep_csv(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["schema", SWEEP_SCHEMA, result.test_function, result.domain])
    w.writerow(SWEEP_COLUMNS)
    lo, hi = result.slope_ci
    for r in result.rows:
        w.writerow([_fmt(v) for v in (r.n, r.beta, r.mean, r.std, r.stderr, r.ess, r.rhat, r.acceptance,
                                      r.baseline_std, r.baseline_stderr, result.slope, lo, hi,
                                      result.baseline_slope, r.bound, r.h_opt, r.log_zeta_moment)])
    return buf.getvalue()


def read_sweep_csv(text):
    """Parse a sweep CSV back into (header info, list of row dicts)."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:2] != ["schema", SWEEP_SCHEMA]:
        raise ValueError("not a sweep CSV")
    cols = rows[1]
    data = [dict(zip(cols, (float(v) for v in r))) for r in rows[2:] if r]
    return {"test_function": rows[0][2], "domain": rows[0][3]}, data


def svg_plot(result):
    """Log-log plot of std vs N with both fits and a slope-1/3 reference line."""
    width, height, pad = 480, 360, 50
    rows = result.rows
    if not rows:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"></svg>\n'
    xs = np.log([r.n for r in rows])
    ys = np.log([r.std for r in rows] + [r.baseline_std for r in rows])
    x0, x1 = xs.min() - 0.2, xs.max() + 0.2
    y0, y1 = ys.min() - 0.3, ys.max() + 0.3

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" '
           'font-size="11">',
           f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" '
           'stroke="black"/>',
           f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle">log N</text>',
           f'<text x="14" y="{height / 2}" transform="rotate(-90 14 {height / 2})" text-anchor="middle">'
           'log std</text>']
    series = [("chains", [r.std for r in rows], [r.stderr for r in rows], result.slope, "#1f77b4"),
              ("i.i.d. baseline", [r.baseline_std for r in rows], [r.baseline_stderr for r in rows],
               result.baseline_slope, "#d62728")]
    for k, (label, std, se, slope, color) in enumerate(series):
        ly = np.log(std)
        for x, y, s, e in zip(xs, ly, std, se):
            d = e / s
            out.append(f'<line x1="{px(x):.2f}" y1="{py(y - d):.2f}" x2="{px(x):.2f}" y2="{py(y + d):.2f}" '
                       f'stroke="{color}"/>')
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="{color}"/>')
        if math.isfinite(slope):
            b = float(np.mean(ly - slope * xs))
            out.append(f'<line x1="{px(xs[0]):.2f}" y1="{py(b + slope * xs[0]):.2f}" x2="{px(xs[-1]):.2f}" '
                       f'y2="{py(b + slope * xs[-1]):.2f}" stroke="{color}"/>')
        text = f"{label}: slope {slope:.3f}" if math.isfinite(slope) else label
        out.append(f'<text x="{pad + 8}" y="{pad + 16 + 14 * k}" fill="{color}">{text}</text>')
    ly = np.log([r.std for r in rows])
    b = ly[0] - REFERENCE_SLOPE * xs[0]
    out.append(f'<line x1="{px(xs[0]):.2f}" y1="{py(b + REFERENCE_SLOPE * xs[0]):.2f}" x2="{px(xs[-1]):.2f}" '
               f'y2="{py(b + REFERENCE_SLOPE * xs[-1]):.2f}" stroke="gray" stroke-dasharray="4 3"/>')
    out.append(f'<text x="{pad + 8}" y="{pad + 44}" fill="gray">reference slope 1/3</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def sweep_summary(result):
    """Pass/fail flags for the sweep-level acceptance checks."""
    if not result.rows:
        return {"status": "NO DATA", "test_function": result.test_function, "criteria": {}}
    crit = {"converged": bool(result.converged)}
    if math.isfinite(result.slope):
        crit["slope_at_most_0.45"] = bool(result.slope <= 0.45)
        crit["below_baseline"] = bool(result.slope < result.baseline_slope)
    status = "UNCONVERGED" if not result.converged else ("PASS" if all(crit.values()) else "FAIL")
    return {
        "status": status,
        "test_function": result.test_function,
        "domain": result.domain,
        "slope": result.slope,
        "slope_ci": list(result.slope_ci),
        "baseline_slope": result.baseline_slope,
        "baseline_ci": list(result.baseline_ci),
        "criteria": crit,
        "rows": [asdict(r) for r in result.rows],
    }


def _safe_name(name):
    return name.replace(":", "_").replace(",", "_").replace("@", "_")


def emit_report(result, out_dir):
    """Write the CSV, SVG and JSON summary of one scaling result; returns the paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        stem = f"sweep_{_safe_name(result.test_function)}"
        paths = {"csv": out / f"{stem}.csv", "svg": out / f"{stem}.svg", "summary": out / f"{stem}.json"}
        paths["csv"].write_text(sweep_csv(result))
        paths["svg"].write_text(svg_plot(result))
        paths["summary"].write_text(json.dumps(sweep_summary(result), indent=2, default=float) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return paths


def analyze(csv_text):
    """Refit a sweep CSV; returns a dict with the recomputed slopes."""
    info, rows = read_sweep_csv(csv_text)
    out = {"test_function": info["test_function"], "domain": info["domain"], "rows": len(rows)}
    if len(rows) < 4:
        out.update(slope=math.nan, baseline_slope=math.nan)
        return out
    n = [r["N"] for r in rows]
    out["slope"] = wls_slope(n, [r["std"] for r in rows], [r["stderr"] for r in rows])[0]
    out["baseline_slope"] = wls_slope(n, [r["baseline_std"] for r in rows], [r["baseline_stderr"] for r in rows])[0]
    out["stored_slope"] = rows[0]["slope"]
    return out


# -- kernel check / ground state ----------------------------------------------------------


def kernel_check(spec=None, points=200, seed=0):
    """Kernel PDE contract: FD Laplacian, Ewald alpha-invariance and grid mean."""
    table_size = spec.table_size if spec else 128
    seed = spec.seed if spec else seed
    kernel = _kernel("torus", table_size)
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < points:
        x = rng.random(3)
        if np.linalg.norm(x - np.round(x)) > 0.2:
            pts.append(x)
    pts = np.array(pts)
    lap = kernel.laplacian_fd(pts, h=1.0 / 64, order=6)
    lap_err = float(np.max(np.abs(lap - 1.0)))
    alpha_err = 0.0
    sample = pts[:50]
    vals = [kernel.ewald(sample, alpha=a) for a in (4.0, 6.0, 8.0)]
    alpha_err = float(max(np.max(np.abs(vals[0] - vals[1])), np.max(np.abs(vals[2] - vals[1]))))
    mean = kernel.grid_mean(64)
    res = {
        "laplacian_max_error": lap_err,
        "laplacian_ok": lap_err <= 1e-3,
        "alpha_invariance": alpha_err,
        "alpha_ok": alpha_err <= 1e-10,
        "grid_mean": mean,
        "grid_mean_ok": abs(mean) <= 5e-3,
        "m_pot": kernel.m_pot,
        "g_reg0": kernel.g_reg0,
    }
    res["passed"] = bool(res["laplacian_ok"] and res["alpha_ok"] and res["grid_mean_ok"])
    return res


CERT_COLUMNS = ["N", "r", "S_r", "C_sub", "B_N", "H_opt", "B_over_N43", "H_opt_over_N43"]


def ground_state_table(spec, threads=None):
    """Certificates and optimizer energies for every N; returns Certificate list."""
    kernel = _kernel(spec.domain, spec.table_size)
    eq = solve_quadratic_equilibrium() if spec.domain == "euclidean" else None
    certs = []
    for n in spec.n:
        if spec.domain == "torus":
            cert = certify_lower_bound(n, kernel, spec.certificate_grid)
            cert.h_opt = minimize_energy(n, kernel, seeds=spec.gs_seeds, sweeps=spec.gs_sweeps).energy
        else:
            cert = certify_euclidean_lower_bound(n, eq)
            cert.h_opt = regularized_ground_state(n, eq, seeds=spec.gs_seeds, sweeps=spec.gs_sweeps).energy
        certs.append(cert)
    return certs


def certificate_csv(certs):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    label = certs[0].label if certs else "numerical certificate"
    w.writerow(["schema", CERTIFICATE_SCHEMA, label])
    w.writerow(CERT_COLUMNS)
    for c in certs:
        row = c.as_row()
        w.writerow([_fmt(row[k]) for k in CERT_COLUMNS])
    return buf.getvalue()


# -- sample / audit -------------------------------------------------------------------------


def trace_file_text(by_n, observables):
    """All chain traces in one CSV, ordered by (N, chain)."""
    cols = ["N", "chain_id", "sweep", "H"] + list(observables) + ["acceptance"]
    lines = ["schema,coulombgas-trace/1", ",".join(cols)]
    for n in sorted(by_n):
        for r in by_n[n]:
            for line in r["trace_csv"].splitlines():
                lines.append(f"{n},{line}")
    return "\n".join(lines) + "\n"


def chain_diagnostics(spec, by_n):
    """Per-N R-hat and ESS of every recorded observable plus the energy."""
    out = {}
    for n, runs in sorted(by_n.items()):
        names = ["H"] + list(runs[0]["observables"])
        diag = {}
        for name in names:
            x = np.array([r["energy"] if name == "H" else r["observables"][name] for r in runs])
            ok = x.shape[1] >= 4
            diag[name] = {"rhat": split_rhat(x) if ok and x.shape[0] * x.shape[1] >= 8 else math.nan,
                          "ess": effective_sample_size(x) if ok else float(x.size)}
        rhats = [d["rhat"] for d in diag.values() if math.isfinite(d["rhat"])]
        out[n] = {"observables": diag, "max_rhat": max(rhats) if rhats else math.nan,
                  "converged": bool(rhats) and max(rhats) <= spec.rhat_threshold,
                  "acceptance": [r["acceptance"] for r in runs], "sigma": [r["sigma"] for r in runs]}
    return out


def run_audit(spec, n=None):
    """Inequality audit for one N (default: the first of the spec)."""
    from .audit import euclidean_audit, torus_audit

    n = n or spec.n[0]
    cid = chain_id_for(n, 0)
    beta = spec.beta_for(n)
    eq = solve_quadratic_equilibrium() if spec.domain == "euclidean" else None
    cfg = initial_configuration(spec, n, cid, equilibrium=eq)
    phi = make_test_function(spec.test_functions[0], eq)
    if spec.domain == "torus":
        return torus_audit(cfg, beta, spec.sweeps, spec.burn_in, spec.thin, seed=spec.seed, m=spec.grid, phi=phi,
                           lambdas=spec.lambdas, refine_every=spec.refine_every,
                           certificate_grid=spec.certificate_grid, chain_id=cid)
    return euclidean_audit(cfg, beta, spec.sweeps, eq, spec.burn_in, spec.thin, seed=spec.seed, m=spec.grid,
                           phi=phi, refine_every=spec.refine_every, chain_id=cid)


def audit_csv(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["schema", "coulombgas-audit/1", result.domain, result.n, repr(result.beta)])
    w.writerow(["name", "kind", "slack", "stderr", "quad", "passed", "informational", "description"])
    for c in result.checks:
        w.writerow([c.name, c.kind, repr(c.slack), repr(c.stderr), repr(c.quad), int(c.passed),
                    int(c.informational), c.description])
    return buf.getvalue()
