import csv
import json

import numpy as np
import pytest

from ecmabund.cli import main, read_counts
from ecmabund.study import DesignSpec, build_design

SMALL = {"cell_side": 5, "nx": 5, "ny": 5, "check_times": [0.5, 1.5]}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_simulate_snapshot_zero_detection(tmp_path):
    cfg = write(tmp_path / "c.json", {"model": "snapshot", "design": SMALL,
                                      "params": {"sigma": 2, "v": [-1, 1], "p": 0.0, "N": 100}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    data = rows(tmp_path / "o" / "counts.csv")
    assert list(data[0]) == ["time", "cell_x", "cell_y", "count"]
    assert len(data) == 50 and all(r["count"] == "0" for r in data)
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["subcommand"] == "simulate" and man["seed"] == 0 and "version" in man and "elapsed_seconds" in man


def test_simulate_same_seed_identical(tmp_path):
    cfg = write(tmp_path / "c.json", {"model": "ecodiff", "design": SMALL,
                                      "params": {"sigma": 2, "v": [-1, 1], "p": 0.1, "N": 1000}})
    for d in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / d), "--seed", "42"]) == 0
    assert (tmp_path / "a" / "counts.csv").read_bytes() == (tmp_path / "b" / "counts.csv").read_bytes()


@pytest.mark.parametrize("markov", [False, True])
def test_simulate_capture_bounded(tmp_path, markov):
    cfg = write(tmp_path / "c.json", {"model": "capture", "design": SMALL,
                                      "params": {"sigma": 2, "v": [-1, 1], "alpha": 0.1, "N": 500}})
    argv = ["simulate", "--config", cfg, "--out", str(tmp_path / "o"), "--seed", "3"]
    assert main(argv + (["--markov-approx"] if markov else [])) == 0
    data = rows(tmp_path / "o" / "counts.csv")
    first = sum(int(r["count"]) for r in data if float(r["time"]) == 0.5)
    assert 0 < first <= 500


def test_invalid_configs_report_fields(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"model": "snapshot",\n "params": {"sigma": 2,}}')
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err
    cfg = write(tmp_path / "c.json", {"model": "snapshot", "params": {"sigma": -1, "v": [0, 0], "p": 0.1, "N": 5}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "params.sigma" in capsys.readouterr().err
    cfg = write(tmp_path / "c2.json", {"model": "snapshot", "params": {"sigma": 1, "v": [0, 0], "N": 5}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "params.p" in capsys.readouterr().err


@pytest.mark.parametrize("kernel", ["full_space", "escaping"])
def test_volterra_outputs(tmp_path, kernel):
    cfg = write(tmp_path / "v.json", {"kernel": kernel, "alpha": 0.1, "t0": 0, "tH": 1.5, "dt": 1 / 60})
    assert main(["volterra", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    data = rows(tmp_path / "o" / "volterra.csv")
    assert list(data[0]) == ["t", "f_Tc", "phi_Tc", "f_analytic", "abs_error"] and len(data) == 91
    summary = json.loads((tmp_path / "o" / "volterra_summary.json").read_text())
    if kernel == "full_space":
        assert summary["within_bound"]
    assert summary["max_abs_error"] == pytest.approx(max(float(r["abs_error"]) for r in data[1:] + data[:1]))


def test_volterra_warns_but_runs(tmp_path, capsys):
    cfg = write(tmp_path / "v.json", {"kernel": "full_space", "alpha": 1.0, "tH": 1.5})
    assert main(["volterra", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert "warning" in capsys.readouterr().err


def test_volterra_trajectory_kernel(tmp_path):
    cfg = write(tmp_path / "v.json", {"kernel": "trajectory", "alpha": 0.1, "tH": 1.5, "design": SMALL,
                                      "params": {"sigma": 2, "v": [-1, 1]}})
    assert main(["volterra", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert list(rows(tmp_path / "o" / "volterra.csv")[0]) == ["t", "f_Tc", "phi_Tc"]


def test_fit_ecodiff_large_n_recovers_sigma(tmp_path):
    sim = write(tmp_path / "s.json", {"model": "ecodiff", "params": {"sigma": 2, "v": [-1, 1], "p": 0.1,
                                                                      "N": 100000}})
    assert main(["simulate", "--config", sim, "--out", str(tmp_path / "d"), "--seed", "5"]) == 0
    fcfg = write(tmp_path / "f.json", {"model": "ecodiff", "method": "mle", "params": {"N": 100000},
                                       "data": "d/counts.csv"})
    for out in ("a", "b"):
        assert main(["fit", "--config", fcfg, "--out", str(tmp_path / out)]) == 0
    res = json.loads((tmp_path / "a" / "fit.json").read_text())
    assert abs(res["estimates"]["sigma"] - 2.0) / 2.0 < 0.02
    assert (tmp_path / "a" / "fit.json").read_bytes() == (tmp_path / "b" / "fit.json").read_bytes()
    table = (tmp_path / "a" / "fit_table.txt").read_text()
    assert "sigma" in table and "c.c. logL" in table


def test_fit_rejects_mismatched_data(tmp_path):
    csvp = tmp_path / "x.csv"
    csvp.write_text("time,cell_x,cell_y,count\n0.5,1000.0,0.0,3\n")
    fcfg = write(tmp_path / "f.json", {"model": "ecodiff", "method": "mle", "params": {"N": 10}, "design": SMALL})
    assert main(["fit", "--config", fcfg, "--out", str(tmp_path / "o"), "--data", str(csvp)]) == 2


def test_read_counts_roundtrip(tmp_path):
    design, _ = build_design(DesignSpec(nx=3, ny=3))
    counts = np.arange(18)
    from ecmabund.cli import write_counts
    write_counts(tmp_path / "c.csv", design.times, design.cells, counts)
    assert np.array_equal(read_counts(tmp_path / "c.csv", design.times, design.cells), counts)


def test_study_cli_and_env_threads(tmp_path, monkeypatch):
    cfg = write(tmp_path / "st.json", {"fits": [["ecodiff", "mle"], ["snapshot", "mgle"]], "Ns": [100],
                                       "sigmas": [2.0], "design": SMALL})
    monkeypatch.setenv("ECMABUND_THREADS", "1")
    for d in ("a", "b"):
        assert main(["study", "--config", cfg, "--out", str(tmp_path / d), "--replications", "2",
                     "--seed", "9", "--threads", "4"]) == 0
    assert (tmp_path / "a" / "study.csv").read_bytes() == (tmp_path / "b" / "study.csv").read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["failures"] == [] and man["resolved_config"]["replications"] == 2
    assert man["resolved_config"]["master_seed"] == 9
    assert len(rows(tmp_path / "a" / "study.csv")) == 2


def test_module_entry_point():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-m", "ecmabund", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "ecmabund" in out.stdout
