import hashlib
import json

import numpy as np
import pytest

from mvstable.cli import accuracy_cell, main
from mvstable.pipeline import write_matrix_csv


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def levels_csv(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("data")
    rng = np.random.default_rng(0)
    rets = rng.standard_t(3, size=(260, 2)) * 0.01
    levels = np.exp(np.cumsum(np.vstack([np.zeros(2), rets]), axis=0))
    path = tmp / "levels.csv"
    write_matrix_csv(path, levels, ["a", "b"])
    return path


MEASURE = ('{"type": "discrete", "atoms": [[1.0, 0.0], [-1.0, 0.0], '
           '[0.0, 1.0], [0.0, -1.0]], "weights": [0.25, 0.25, 0.25, 0.25]}')


def test_simulate_and_manifest(tmp_path):
    out = tmp_path / "sim"
    rc = main(["simulate", "--measure", MEASURE, "--alpha", "1.7",
               "--n", "100", "--seed", "3", "--out", str(out)])
    assert rc == 0
    sample = np.loadtxt(out / "sample.csv", delimiter=",", skiprows=1)
    assert sample.shape == (100, 2)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["outputs"]["sample"] == sha(out / "sample.csv")


def test_density_emits_cauchy(tmp_path):
    out = tmp_path / "dens"
    measure = '{"type": "discrete", "atoms": [[1.0], [-1.0]], "weights": [0.5, 0.5]}'
    rc = main(["density", "--measure", measure, "--alpha", "1.0",
               "--lo", "-4", "--hi", "4", "--points", "9",
               "--out", str(out)])
    assert rc == 0
    rows = np.loadtxt(out / "density.csv", delimiter=",", skiprows=1)
    ts, dens = rows[:, 0], rows[:, 1]
    exact = 1.0 / (np.pi * (1.0 + ts ** 2))
    assert np.allclose(dens, exact, atol=1e-6)


def test_estimate_spectral_runs(tmp_path, levels_csv):
    out = tmp_path / "spec"
    rc = main(["estimate-spectral", "--data", str(levels_csv),
               "--j-atoms", "4", "--alpha", "1.6", "--no-garch",
               "--out", str(out), "--seed", "2"])
    assert rc == 0
    result = json.loads((out / "spectral.json").read_text())
    assert len(result["gamma_hat"]) == 4
    assert result["total_mass"] > 0


def test_fit_discrete_and_replay(tmp_path, levels_csv):
    out1 = tmp_path / "fit1"
    args = ["fit-discrete", "--data", str(levels_csv), "--j-atoms", "3",
            "--burn-in", "60", "--draws", "60", "--thin", "6",
            "--seed", "4", "--no-garch", "--out", str(out1)]
    assert main(args) == 0
    trace_hash = sha(out1 / "trace.ndjson")

    out2 = tmp_path / "fit2"
    manifest = json.loads((out1 / "manifest.json").read_text())
    manifest["args"]["out"] = str(out2)
    replay_path = tmp_path / "replay.json"
    replay_path.write_text(json.dumps(manifest))
    assert main(["--replay", str(replay_path)]) == 0
    assert sha(out2 / "trace.ndjson") == trace_hash


def test_diagnose_runs(tmp_path, levels_csv, capsys):
    out = tmp_path / "fit"
    main(["fit-discrete", "--data", str(levels_csv), "--j-atoms", "3",
          "--burn-in", "60", "--draws", "240", "--thin", "2",
          "--seed", "5", "--no-garch", "--out", str(out)])
    capsys.readouterr()
    assert main(["diagnose", "--trace", str(out / "trace.ndjson")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert "alpha" in report and "total_mass" in report
    assert "geweke_z" in report["alpha"]
    assert "acf_lag50" in report["alpha"]


def test_accuracy_cell_small():
    # tiny reference so the unit test stays fast; the paper-scale cells run
    # in the acceptance suite
    err = accuracy_cell(5, 1.5, 100, n_directions=200, seed=1,
                        m_reference=20000)
    assert 0.0 < err < 0.08


def test_unknown_flag_rejected(capsys):
    with pytest.raises(SystemExit):
        main(["simulate", "--bogus", "1"])
