import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from cvcluster.cli import main
from cvcluster.fixtures import load_fixture
from cvcluster.sampler import QuadratureDataset
from cvcluster.spectra import PARAM_NAMES

COMMANDS = ["graph", "nullifiers", "audit", "sample", "trace", "spectrum", "fit"]


def test_help_lists_every_command(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    for cmd in COMMANDS:
        assert cmd in text
    for cmd in COMMANDS:
        with pytest.raises(SystemExit):
            main([cmd, "--help"])
        sub = capsys.readouterr().out
        for flag in ("--config", "--seed", "--threads", "--out", "--verbose"):
            assert flag in sub


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "cvcluster", "audit", "--db", "-4", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert json.loads(out.stdout)["violated"] == "127/127"


def test_graph_with_unfold(tmp_path):
    assert main(["graph", "--unfold", "--k", "60", "--out", str(tmp_path)]) == 0
    for stage in "ABCD":
        assert (tmp_path / f"unfold_{stage}.json").exists()
        assert (tmp_path / f"unfold_{stage}_edges.csv").exists()
    d = json.loads((tmp_path / "unfold_D.json").read_text())
    assert d["dim"] == 27
    manifest = json.loads((tmp_path / "graph_run.json").read_text())
    assert manifest["seed"] == 0 and manifest["circuit"]["n_temporal"] == 60


def test_odd_circumference_is_invalid_input(tmp_path, capsys):
    assert main(["graph", "--n", "5", "--out", str(tmp_path)]) == 2
    assert "bipartite" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path):
    assert main(["graph", "--r", "10", "--out", str(tmp_path)]) == 3


@pytest.mark.parametrize("bound,code", [(-8.0, 0), (-8.686, 1), (-9.0, 1)])
def test_bound_is_strict(tmp_path, bound, code):
    # r = 1 gives exactly 10 log10(e^-2) = -8.6859 dB
    assert main(["nullifiers", "--r", "1", "--bound-db", str(bound), "--out", str(tmp_path)]) == code


def test_nullifiers_csv(tmp_path):
    assert main(["nullifiers", "--method", "sample", "--shots", "500", "--k", "26", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "nullifiers.csv")))
    assert {r["kind"] for r in rows} == {"x", "p"}
    assert all(float(r["stderr"]) > 0 for r in rows)


def test_fixture_nullifiers_are_analytic(tmp_path, capsys):
    assert main(["nullifiers", "--fixture", "experiment", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "x-nullifier" in out and "p-nullifier" in out


@pytest.mark.parametrize("db,code", [("-3.2", 0), ("0", 1)])
def test_audit_exit_codes(tmp_path, db, code):
    assert main(["audit", "--db", db, "--out", str(tmp_path)]) == code
    doc = json.loads((tmp_path / "audit.json").read_text())
    assert len(doc["rows"]) == 127


def test_audit_from_datasets(tmp_path):
    for basis, seed in (("x", "1"), ("p", "2")):
        assert main(["sample", "--n", "4", "--k", "16", "--r", "0.8", "--shots", "3000", "--basis", basis,
                     "--seed", seed, "--out", str(tmp_path)]) == 0
    assert main(["audit", "--datasets", str(tmp_path / "dataset_x.cvqd"), str(tmp_path / "dataset_p.cvqd"),
                 "--out", str(tmp_path)]) == 0


def test_sample_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out, threads in ((a, "1"), (b, "4")):
        assert main(["sample", "--shots", "2500", "--seed", "42", "--threads", threads, "--csv",
                     "--out", str(out)]) == 0
    assert (a / "dataset_x.cvqd").read_bytes() == (b / "dataset_x.cvqd").read_bytes()
    assert (a / "dataset_x.csv").read_bytes() == (b / "dataset_x.csv").read_bytes()
    data = QuadratureDataset.load(a / "dataset_x.cvqd")
    assert data.seed == 42 and data.params.r_a == 1.0


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"shots": 300, "basis": "p", "r_a": 0.3, "r_b": 0.4, "seed": 7}))
    assert main(["sample", "--config", str(cfg), "--seed", "8", "--out", str(tmp_path)]) == 0
    data = QuadratureDataset.load(tmp_path / "dataset_p.cvqd")
    assert data.shots == 300 and data.seed == 8
    assert (data.params.r_a, data.params.r_b) == (0.3, 0.4)


def test_invalid_inputs(tmp_path):
    assert main(["sample", "--seed", "-1", "--out", str(tmp_path)]) == 2
    assert main(["sample", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"r_a": 1.0, "bogus_field": 1, "tau_ns": 200}))
    assert main(["sample", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["fit", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 2


def test_trace_spectrum_fit_pipeline(tmp_path):
    """End to end: 36 traces of 10 ms per basis, in files of 4 traces."""
    files = []
    for basis, seed in (("x", "0"), ("p", "1")):
        for i in range(9):
            out = tmp_path / f"{basis}{i}"
            assert main(["trace", "--fixture", "experiment", "--duration", "10e-3", "--n-traces", "4",
                         "--first-index", str(4 * i), "--basis", basis, "--seed", seed, "--out", str(out)]) == 0
            files.append(str(out / f"trace_{basis}.cvtr"))
    assert main(["spectrum", *files, "--segment", "16384", "--out", str(tmp_path)]) == 0
    assert main(["fit", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "fit.json").read_text())
    truth = dict(zip(PARAM_NAMES, load_fixture().model.vector()))
    tol = {"epsilon": 0.005, "gamma": 0.005, "eta": 0.01, "sigma": 0.05}
    for name, value in doc["params"].items():
        assert abs(value / truth[name] - 1) < tol[name.split("_")[0]], name
    assert np.isfinite(doc["cost"])
