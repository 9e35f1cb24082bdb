"""Command-line entry point: ``coulomb <command> --config FILE``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex

EXIT_OK = 0
EXIT_UNCONVERGED = 2
EXIT_VIOLATION = 3
EXIT_CONFIG = 4

log = logging.getLogger("coulombgas")


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


def _json(obj):
    return json.dumps(obj, indent=2, default=lambda v: float(v) if hasattr(v, "__float__") else str(v)) + "\n"


def cmd_kernel_check(spec, out):
    res = ex.kernel_check(spec)
    cols = list(res)
    text = "schema,coulombgas-kernel-check/1\n" + ",".join(cols) + "\n" + ",".join(
        repr(res[c]) if isinstance(res[c], float) else str(int(res[c]) if isinstance(res[c], bool) else res[c])
        for c in cols) + "\n"
    sys.stdout.write(text)
    _write(out / "kernel_check.csv", text)
    return EXIT_OK if res["passed"] else EXIT_VIOLATION


def cmd_sample(spec, out, threads):
    by_n = ex.run_chains(spec, threads)
    names = list(next(iter(by_n.values()))[0]["observables"])
    _write(out / "traces.csv", ex.trace_file_text(by_n, names))
    diag = ex.chain_diagnostics(spec, by_n)
    _write(out / "diagnostics.json", _json({"schema": "coulombgas-diagnostics/1", "per_n": diag}))
    code = EXIT_OK if all(d["converged"] for d in diag.values()) else EXIT_UNCONVERGED
    if spec.audit_enabled:
        res = ex.run_audit(spec)
        _write(out / "audit.csv", ex.audit_csv(res))
        _write(out / "audit_summary.json", _json({"schema": "coulombgas-audit-summary/1", "passed": res.passed,
                                                  "coverage": res.covered, "worst_sweep": res.worst_sweep,
                                                  "extra": res.extra}))
        if not res.passed:
            return EXIT_VIOLATION
    return code


def cmd_ground_state(spec, out):
    certs = ex.ground_state_table(spec)
    text = ex.certificate_csv(certs)
    sys.stdout.write(text)
    _write(out / "certificates.csv", text)
    return EXIT_OK if all(c.bound <= c.h_opt for c in certs) else EXIT_VIOLATION


def cmd_sweep(spec, out, threads):
    results = ex.run_sweep(spec, threads)
    code = EXIT_OK
    for res in results:
        ex.emit_report(res, out)
        summary = ex.sweep_summary(res)
        print(f"{res.test_function}: {summary['status']} slope={res.slope:.4f} baseline={res.baseline_slope:.4f}")
        if not res.converged:
            code = EXIT_UNCONVERGED
    return code


def cmd_analyze(spec, out):
    from .equilibrium import solve_quadratic_equilibrium

    if not spec.input:
        raise ex.ConfigError("analyze needs [experiment] input = <sweep csv>")
    try:
        text = Path(spec.input).read_text()
    except OSError as exc:
        raise ex.ConfigError(f"cannot read {spec.input}: {exc}") from None
    res = ex.analyze(text)
    if spec.domain == "euclidean":
        res["equilibrium"] = solve_quadratic_equilibrium().summary()
    sys.stdout.write(_json(res))
    _write(out / "analysis.json", _json(res))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="coulomb", description="Coulomb gas sampling and fluctuation experiments.")
    p.add_argument("command", choices=ex.KINDS)
    p.add_argument("--config", required=True, help="INI experiment file (see --schema)")
    p.add_argument("--seed", type=int, help="override [experiment] seed")
    p.add_argument("--out", help="override [experiment] output directory")
    p.add_argument("--threads", type=int, help=f"worker processes (env {ex.THREADS_ENV} wins)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    if "--schema" in argv:
        sys.stdout.write(ex.schema_text())
        return EXIT_OK
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        spec = ex.load_config(args.config, {"seed": args.seed, "output": args.out, "kind": args.command})
        threads = ex.resolve_threads(args.threads if args.threads is not None else spec.threads)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(spec.output)
    try:
        if args.command == "kernel-check":
            return cmd_kernel_check(spec, out)
        if args.command == "sample":
            return cmd_sample(spec, out, threads)
        if args.command == "ground-state":
            return cmd_ground_state(spec, out)
        if args.command == "sweep":
            return cmd_sweep(spec, out, threads)
        return cmd_analyze(spec, out)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ex.InequalityViolation as exc:
        if exc.snapshot:
            _write(out / "violation_snapshot.csv", exc.snapshot)
        print(f"inequality violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
