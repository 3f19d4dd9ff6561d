import configparser
import json

import numpy as np
import pytest

from qsd_entropy.cli import EXIT_CONFIG, EXIT_OK, main
from qsd_entropy.config import RunConfig
from qsd_entropy.io import read_csv, sha256
from qsd_entropy.model import ModelParams, stationary_moment


def _small(tmp_path, **kw):
    cfg = RunConfig(n_traj=300, t_max=0.3, dt=1e-3, dt_pde=1e-3, n_grid=200, cadence=0.05, **kw)
    return cfg.write(tmp_path / "small.ini")


def _outputs(d):
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(d / "manifest.ini")
    return dict(cp.items("outputs"))


def test_stationary_command(tmp_path, capsys):
    out = tmp_path / "st"
    assert main(["stationary", "--out", str(out)]) == EXIT_OK
    m = read_csv(out / "stationary_moments.csv")
    np.testing.assert_array_equal(m["gamma"], [1.0, 1.2, 1.5, 2.0])
    p = ModelParams()
    for g, mu in zip(m["gamma"], m["normalised_mean"]):
        assert mu == pytest.approx(stationary_moment(p.with_gamma(g), 1), rel=1e-12)
    assert np.all(m["fp_l1_to_analytic"] < 1e-2)
    fam = read_csv(out / "stationary_family.csv")
    assert {"p_gamma_1", "p_gamma_2"} <= set(fam)
    for k, v in _outputs(out).items():
        name, digest = v.split(" sha256:")
        assert sha256(out / name) == digest


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    ini = _small(base)
    dirs = []
    for tag in ("a", "b"):
        d = base / tag
        assert main(["run", "--config", str(ini), "--seed", "3", "--out", str(d)]) == EXIT_OK
        dirs.append(d)
    d = base / "mbar"
    assert main(["run", "--config", str(ini), "--seed", "4", "--kind", "Mbar", "--out", str(d)]) == EXIT_OK
    dirs.append(d)
    return base, dirs


def test_same_seed_same_checksums(two_runs):
    _, (a, b, _) = two_runs
    oa, ob = _outputs(a), _outputs(b)
    assert oa == ob
    assert {"final", "aggregate", "ledger", "snapshots", "summary", "curves", "hist", "states", "l1"} <= set(oa)


def test_manifest_reconstructs_run(two_runs):
    base, (a, _, _) = two_runs
    c = base / "again"
    assert main(["run", "--config", str(a / "manifest.ini"), "--out", str(c)]) == EXIT_OK
    assert _outputs(c) == _outputs(a)


def test_run_outputs_are_consistent(two_runs):
    _, (a, _, m) = two_runs
    s = json.loads((a / "summary.json").read_text())
    assert s["kind"] == "M" and s["n_committed"] == 300
    f = read_csv(a / "final.csv")
    led = read_csv(a / "ledger.csv")
    assert np.mean(f["ds_tot_final"]) == pytest.approx(led["mean_ds_tot_cum"][-1], rel=1e-12)
    assert json.loads((m / "summary.json").read_text())["kind"] == "Mbar"
    snap = read_csv(a / "pdf_snapshots.csv")
    for t in np.unique(snap["t"]):
        sel = snap["t"] == t
        assert np.sum(snap["p"][sel]) * 2 / sel.sum() == pytest.approx(1.0, abs=1e-9)


def test_dft_command(two_runs):
    base, (a, _, m) = two_runs
    out = base / "dft"
    assert main(["dft", str(a), str(m), "--out", str(out), "--n-min", "5"]) == EXIT_OK
    rep = json.loads((out / "dft_report.json").read_text())
    assert np.isfinite(rep["slope"]) and rep["n_bins"] >= 2
    assert (out / "dft.csv").exists() and (out / "dft_densities.csv").exists()


def test_bad_config_exit_code_and_error_file(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[model]\nbeta = -1\n[protocol]\ndt = 0\n")
    out = tmp_path / "o"
    assert main(["run", "--config", str(ini), "--out", str(out)]) == EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == EXIT_CONFIG and len(err["violations"]) >= 2
    assert json.loads((out / "error.json").read_text()) == err


def test_unknown_key_exit_code(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[run]\nthreads = 4\n")
    assert main(["stationary", "--config", str(ini)]) == EXIT_CONFIG
    assert "threads" in capsys.readouterr().err


def test_validate_only_subset(tmp_path):
    from qsd_entropy.validation import run_suite

    checks = run_suite(only=["diagonality", "config_roundtrip", "dft_oracle"])
    assert checks and all(c.passed for c in checks)
