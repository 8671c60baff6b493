import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from tdforge.cli import EXIT_INPUT, EXIT_OK, EXIT_VERIFY, main
from tdforge.instances import load_instance


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_generate_two_state(workdir):
    assert main(["generate", "--chain", "two-state(0.1,0.1)", "--out", "two.json"]) == EXIT_OK
    doc = json.loads((workdir / "two.json").read_text())
    assert doc["transition"] == [[[0.9, 0.1]], [[0.1, 0.9]]]
    assert np.allclose(doc["pi"], [0.5, 0.5])


def test_generate_adversarial_and_round_trip(workdir):
    assert main(["generate", "--n", "6", "--d", "3", "--features", "adversarial(1e-3)", "--out", "adv.json"]) == 0
    inst = load_instance(workdir / "adv.json")
    assert inst.features.phi[1, 1] == 1e-3 and inst.features.phi[2, 2] == 1e-3
    assert inst.to_json() == (workdir / "adv.json").read_text()


def test_generate_into_directory(workdir):
    (workdir / "out").mkdir()
    assert main(["generate", "--n", "4", "--d", "2", "--name", "tiny", "--out", "out"]) == EXIT_OK
    assert (workdir / "out" / "tiny.json").exists()


def _zero_reward_instance(path):
    main(["generate", "--n", "5", "--d", "2", "--out", str(path)])
    doc = json.loads(path.read_text())
    doc["reward"] = np.zeros_like(np.array(doc["reward"])).tolist()
    doc.pop("pi")
    path.write_text(json.dumps(doc))


def test_run_zero_reward(workdir):
    _zero_reward_instance(workdir / "z.json")
    assert main(["run", "--instance", "z.json", "--T", "64", "--reps", "3", "--out", "rz"]) == EXIT_OK
    agg = json.loads((workdir / "rz" / "aggregate.json").read_text())
    assert agg["cells"][0]["f_bar_mean"] == 0.0


def test_run_artifacts_and_determinism(workdir, monkeypatch):
    main(["generate", "--n", "6", "--d", "2", "--seed", "3", "--out", "i.json"])
    args = ["run", "--instance", "i.json", "--T", "64,256", "--reps", "4", "--seed", "9", "--stride", "8"]
    monkeypatch.setenv("TDFORGE_THREADS", "1")
    assert main(args + ["--out", "a"]) == EXIT_OK
    monkeypatch.setenv("TDFORGE_THREADS", "3")
    assert main(args + ["--out", "b"]) == EXIT_OK
    assert (workdir / "a" / "aggregate.json").read_bytes() == (workdir / "b" / "aggregate.json").read_bytes()
    rows = list(csv.reader(open(workdir / "a" / "T256" / "rep0003.csv")))
    assert rows[0] == ["t", "eta", "theta_norm", "dist_to_star", "f_value", "grad_norm", "ell"]
    assert len(rows) == 1 + 256 // 8
    summary = json.loads((workdir / "a" / "T64" / "rep0000.json").read_text())
    assert set(summary) == {"theta_bar", "sum_eta", "f_bar", "seed", "config"}
    agg = json.loads((workdir / "a" / "aggregate.json").read_text())
    cell = agg["cells"][1]
    for key in ("f_bar_mean", "f_bar_stderr", "max_mean_theta_sq", "omega_bound", "minT_margin", "minT_ok"):
        assert key in cell
    rates = list(csv.DictReader(open(workdir / "a" / "rates.csv")))
    assert [int(r["T"]) for r in rates] == [64, 256]
    assert float(rates[0]["f_bar_mean"]) == agg["cells"][0]["f_bar_mean"]


def test_run_refuses_small_c(workdir, capsys):
    assert main(["run", "--c", "66", "--T", "64", "--reps", "2", "--out", "x"]) == EXIT_INPUT
    err = capsys.readouterr().err
    assert "30+sqrt(1302)" in err and not (workdir / "x").exists()


def test_run_refuses_non_ergodic_instance(workdir, capsys):
    main(["generate", "--chain", "two-state(0.1,0.1)", "--out", "two.json"])
    doc = json.loads((workdir / "two.json").read_text())
    doc["transition"] = [[[0.0, 1.0]], [[1.0, 0.0]]]
    doc.pop("pi")
    (workdir / "two.json").write_text(json.dumps(doc))
    assert main(["run", "--instance", "two.json", "--T", "64", "--out", "x"]) == EXIT_INPUT
    assert "period 2" in capsys.readouterr().err


def test_config_file(workdir):
    (workdir / "cfg.json").write_text(json.dumps({"generator": {"n": 5, "d": 2}, "c": 120, "T": [64],
                                                  "reps": 2, "formats": ["json"]}))
    assert main(["run", "--config", "cfg.json", "--out", "r"]) == EXIT_OK
    assert not list((workdir / "r" / "T64").glob("*.csv"))
    agg = json.loads((workdir / "r" / "aggregate.json").read_text())
    assert agg["cells"][0]["c"] == 120


def test_bad_config(workdir):
    (workdir / "cfg.json").write_text(json.dumps({"reps": 0}))
    assert main(["run", "--config", "cfg.json"]) == EXIT_INPUT
    assert main(["run", "--config", "missing.json"]) == EXIT_INPUT


def test_report(workdir, capsys):
    main(["generate", "--n", "5", "--d", "2", "--out", "i.json"])
    main(["run", "--instance", "i.json", "--T", "64,128,256", "--reps", "3", "--stride", "16", "--out", "r"])
    capsys.readouterr()
    assert main(["report", "--out", "r"]) == EXIT_OK
    assert "slope" in capsys.readouterr().out
    rows = list(csv.DictReader(open(workdir / "r" / "rate_table.csv")))
    assert len(rows) == 3 and rows[0]["local_slope"] == "" and rows[1]["local_slope"] != ""
    assert main(["report", "--out", "nowhere"]) == EXIT_INPUT


def test_sweep(workdir):
    (workdir / "s.json").write_text(json.dumps({
        "generator": {"n": 5, "d": 2, "seed": 1}, "reps": 2, "T": [64], "axes": {"c": [66, 67, 100, 1000]}}))
    assert main(["sweep", "--config", "s.json", "--out", "sw"]) == EXIT_OK
    rows = list(csv.DictReader(open(workdir / "sw" / "sweep.csv")))
    assert list(rows[0])[:7] == ["c", "f_bar_mean", "f_bar_stderr", "max_mean_theta_sq", "omega_bound", "ratio",
                                 "minT_ok"]
    assert rows[0]["status"].startswith("skipped") and rows[0]["f_bar_mean"] == ""
    bounds = [float(r["omega_bound"]) for r in rows[1:]]
    assert bounds == sorted(bounds, reverse=True) and len(set(bounds)) == 3


def test_verify_fast(workdir):
    assert main(["verify", "--out", "v"]) == EXIT_OK
    rows = list(csv.DictReader(open(workdir / "v" / "lemma_reports.csv")))
    assert rows and all(r["pass"] == "true" for r in rows)


def test_verify_corrupted_instance(workdir, capsys):
    main(["generate", "--n", "4", "--d", "2", "--out", "i.json"])
    doc = json.loads((workdir / "i.json").read_text())
    doc["transition"][0][0] = [x * 0.9 for x in doc["transition"][0][0]]
    (workdir / "i.json").write_text(json.dumps(doc))
    code = main(["verify", "--instance", "i.json"])
    assert code != 0
    assert "row-stochastic" in capsys.readouterr().err


def test_verify_reports_failures(workdir, monkeypatch):
    from tdforge import bias_probe, verify
    monkeypatch.setattr(verify, "run_suite",
                        lambda *a, **k: [("x", bias_probe.LemmaReport("fake", 2.0, 1.0))])
    assert main(["verify", "--out", "v"]) == EXIT_VERIFY


def test_entry_point(workdir):
    proc = subprocess.run([sys.executable, "-m", "tdforge.cli", "generate", "--n", "3", "--d", "1",
                           "--out", "e.json"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "tdforge.cli", "run", "--c", "10"], capture_output=True,
                          text=True)
    assert proc.returncode == 2
