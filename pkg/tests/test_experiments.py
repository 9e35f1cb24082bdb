import json
import math
from pathlib import Path

import numpy as np
import pytest

from coulombgas import cli
from coulombgas import experiments as ex

DATA = Path(__file__).parent / "data"


def small(text=""):
    import configparser

    cp = configparser.ConfigParser()
    cp.read_dict({"system": {"n": "8, 16"}, "sampler": {"sweeps": "120", "burn_in": "20", "chains": "2"},
                  "observables": {"baseline_sets": "200"}})
    cp.read_string(text)
    return "".join(f"[{s}]\n" + "".join(f"{k} = {v}\n" for k, v in cp[s].items()) for s in cp.sections())


def test_defaults_parse():
    spec = ex.parse_config("")
    assert spec.n == [27, 64, 125, 216] and spec.domain == "torus"


@pytest.mark.parametrize(
    "text",
    [
        "[system]\nbogus = 1\n",
        "[nosuch]\nx = 1\n",
        "[system]\nn = 64, 27\n",
        "[system]\nn = 0\n",
        "[sampler]\nchains = 0\n",
        "[sampler]\nburn_in = 10\nsweeps = 10\n",
        "[system]\ndomain = euclidean\nn = 8\nbeta = 0.1\n",
        "[system]\ndomain = sphere\n",
        "[observables]\ntest_functions = bump:0.3\n",
        "[system]\nn = eight\n",
        "[experiment]\nkind = dance\n",
        "not an ini file",
    ],
)
def test_config_errors(text):
    with pytest.raises(ex.ConfigError):
        ex.parse_config(text)


def test_beta_schedule():
    spec = ex.parse_config("[system]\nbeta_scale = 2\nbeta_exponent = -0.5\n")
    assert spec.beta_for(16) == pytest.approx(0.5)


def test_euclidean_beta_floor_accepted():
    spec = ex.parse_config("[system]\ndomain = euclidean\nn = 5\nbeta = 0.25\n"
                           "[observables]\ntest_functions = bump:0.3\n")
    assert spec.beta_for(5) == 0.25


def test_schema_text_lists_every_key():
    text = ex.schema_text()
    for sec, keys in ex.SCHEMA.items():
        assert f"[{sec}]" in text
        for k in keys:
            assert f"\n{k} = " in text


def test_threads_env_override(monkeypatch):
    monkeypatch.setenv(ex.THREADS_ENV, "3")
    assert ex.resolve_threads(1) == 3
    monkeypatch.setenv(ex.THREADS_ENV, "x")
    with pytest.raises(ex.ConfigError):
        ex.resolve_threads(1)


def test_wls_recovers_exact_power_law():
    n = np.array([27, 64, 125, 216])
    std = 2.0 * n**0.3
    slope, icpt, se = ex.wls_slope(n, std, 0.01 * std)
    assert slope == pytest.approx(0.3, abs=1e-12)
    assert icpt == pytest.approx(math.log(2.0), abs=1e-12)
    # analytic standard error of the slope with equal weights
    x = np.log(n)
    assert se == pytest.approx(0.01 / math.sqrt(np.sum((x - x.mean()) ** 2)), rel=1e-10)


def test_wls_refuses_three_points():
    with pytest.raises(ex.FitError):
        ex.wls_slope([1, 2, 3], [1, 2, 3], [0.1, 0.1, 0.1])


def test_poisson_baseline_slope():
    spec = ex.parse_config("[observables]\nbaseline_sets = 10000\n")
    phi = ex.make_test_function("cos:1,0,0")
    n = spec.n
    stds = [np.std(ex.baseline_statistics(spec, phi, k), ddof=1) for k in n]
    for k, s in zip(n, stds):
        assert s == pytest.approx(math.sqrt(k / 2), rel=0.04)
    ses = [s / math.sqrt(2 * spec.baseline_sets) for s in stds]
    slope, _, se = ex.wls_slope(n, stds, ses)
    assert abs(slope - 0.5) <= 0.03


def test_sweep_report_roundtrip(tmp_path):
    spec = ex.parse_config(small("[system]\nn = 8, 12, 16, 20\n"))
    res = ex.run_sweep(spec)[0]
    assert all(r.stderr > 0 for r in res.rows)
    paths = ex.emit_report(res, tmp_path)
    text = paths["csv"].read_text()
    assert text.splitlines()[0].startswith("schema,coulombgas-sweep/1")
    back = ex.analyze(text)
    assert abs(back["slope"] - res.slope) <= 1e-12
    assert abs(back["baseline_slope"] - res.baseline_slope) <= 1e-12
    svg = paths["svg"].read_text()
    assert svg.startswith("<svg") and "reference slope 1/3" in svg
    summary = json.loads(paths["summary"].read_text())
    assert summary["status"] in ("PASS", "FAIL", "UNCONVERGED")


def test_empty_result_report(tmp_path):
    res = ex.ScalingResult("cos:1,0,0", "torus", [])
    paths = ex.emit_report(res, tmp_path)
    lines = paths["csv"].read_text().splitlines()
    assert len(lines) == 2 and lines[1].startswith("N,")
    assert json.loads(paths["summary"].read_text())["status"] == "NO DATA"


def test_emit_report_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="cannot write report"):
        ex.emit_report(ex.ScalingResult("cos:1,0,0", "torus", []), blocker / "sub")


def test_parallel_matches_serial():
    spec = ex.parse_config(small())
    a = ex.run_chains(spec, threads=1)
    b = ex.run_chains(spec, threads=2)
    for n in spec.n:
        assert [r["trace_csv"] for r in a[n]] == [r["trace_csv"] for r in b[n]]


def test_unconverged_flag():
    spec = ex.parse_config(small("[sampler]\nrhat_threshold = 0.5\n"))
    res = ex.run_sweep(spec)[0]
    assert not res.converged
    assert ex.sweep_summary(res)["status"] == "UNCONVERGED"


def test_euclidean_sweep_has_zeta_moment():
    spec = ex.parse_config("[system]\ndomain = euclidean\nn = 8, 16\n[sampler]\nsweeps = 150\nburn_in = 50\n"
                           "chains = 2\n[observables]\ntest_functions = bump:0.3\nbaseline_sets = 200\n")
    res = ex.run_sweep(spec)[0]
    assert all(math.isfinite(r.log_zeta_moment) for r in res.rows)


def test_certificate_csv(tmp_path):
    spec = ex.parse_config("[system]\nn = 2, 8\n[groundstate]\nseeds = 0\nsweeps = 300\n")
    certs = ex.ground_state_table(spec)
    text = ex.certificate_csv(certs)
    lines = text.splitlines()
    assert lines[0].startswith("schema,coulombgas-certificate/1")
    assert lines[1] == ",".join(ex.CERT_COLUMNS)
    assert all(c.bound <= c.h_opt for c in certs)


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[system]\nbogus = 1\n")
    assert cli.main(["sweep", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["sweep", "--config", str(tmp_path / "missing.ini")]) == cli.EXIT_CONFIG
    ok = tmp_path / "ok.ini"
    ok.write_text(small())
    out = tmp_path / "out"
    assert cli.main(["sample", "--config", str(ok), "--out", str(out), "--seed", "3"]) == cli.EXIT_OK
    assert (out / "traces.csv").read_text().startswith("schema,coulombgas-trace/1")
    loose = tmp_path / "loose.ini"
    loose.write_text(small("[sampler]\nrhat_threshold = 0.5\n"))
    assert cli.main(["sweep", "--config", str(loose), "--out", str(out)]) == cli.EXIT_UNCONVERGED
    assert cli.main(["analyze", "--config", str(ok), "--out", str(out)]) == cli.EXIT_CONFIG
    capsys.readouterr()
    assert cli.main(["--schema"]) == cli.EXIT_OK
    assert "[sampler]" in capsys.readouterr().out


def test_cli_analyze(tmp_path):
    csv_path = DATA / "golden_sweep.csv"
    cfg = tmp_path / "a.ini"
    cfg.write_text(f"[experiment]\ninput = {csv_path}\n")
    assert cli.main(["analyze", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_OK
    assert json.loads((tmp_path / "analysis.json").read_text())["rows"] == 2


def test_guard_violation_exit_code(tmp_path, monkeypatch):
    # a bound above every reachable energy must trip the Euclidean guard
    import coulombgas.experiments as mod

    real = mod.certify_euclidean_lower_bound

    def fake(n, eq):
        cert = real(n, eq)
        cert.bound = 1e6
        return cert

    monkeypatch.setattr(mod, "certify_euclidean_lower_bound", fake)
    cfg = tmp_path / "e.ini"
    cfg.write_text("[system]\ndomain = euclidean\nn = 4\n[sampler]\nsweeps = 20\nburn_in = 5\nchains = 1\n"
                   "[observables]\ntest_functions = bump:0.3\n")
    assert cli.main(["sample", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_VIOLATION
    assert (tmp_path / "o" / "violation_snapshot.csv").exists()


def test_kernel_check_cli(tmp_path, capsys):
    cfg = tmp_path / "k.ini"
    cfg.write_text("")
    assert cli.main(["kernel-check", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_OK
    assert capsys.readouterr().out.startswith("schema,coulombgas-kernel-check/1")
