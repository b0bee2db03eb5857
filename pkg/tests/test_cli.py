import json
import subprocess
import sys

import numpy as np

from gridincentive.cli import main
from gridincentive.scenario import data_path

FEEDER = str(data_path("fixture3.feeder.json"))
TIMELINE = str(data_path("fixture3.static.csv"))


def test_validate(capsys):
    assert main(["validate", "--feeder", FEEDER, "--timeline", TIMELINE]) == 0
    assert "3 buses, 3 devices, 20 slots" in capsys.readouterr().out


def test_validate_bad_bus(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("# slot_duration=1\nslot,bus,p_load,q_load,p_av,gamma\n0,99,0,0,0,\n")
    assert main(["validate", "--feeder", FEEDER, "--timeline", str(bad)]) == 2


def test_missing_file():
    assert main(["validate", "--feeder", "nope.json"]) == 2


def test_certify(capsys):
    assert main(["certify", "--feeder", "fixture3"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["certified"] and rep["modulus"] < 1


def test_offline_writes_outputs(tmp_path):
    assert main(["offline", "--feeder", "fixture3", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["converged"] and summary["n"] == 3
    head = (tmp_path / "trace.csv").read_text().splitlines()[0]
    assert head == "k,dy,lagrangian,kkt,max_violation"
    assert main(["report", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "fig_convergence.csv").exists()
    assert (tmp_path / "plot_fig_convergence.py").exists()


def test_offline_uncertified_and_not_converged(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("eps1 = 0.4\n")
    assert main(["offline", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text("eps1 = 0.4\nmax_iter = 50\n")
    assert main(["offline", "--config", str(cfg), "--out", str(tmp_path), "--force",
                 "--stride", "1"]) == 3
    assert len((tmp_path / "trace.csv").read_text().splitlines()) == 51


def test_online_and_report(tmp_path):
    tl = tmp_path / "tl.csv"
    assert main(["synth", "--feeder", "fixture3", "--slots", "30", "--out", str(tl)]) == 0
    run = tmp_path / "run"
    assert main(["online", "--feeder", "fixture3", "--timeline", str(tl), "--k", "2",
                 "--out", str(run)]) == 0
    summary = json.loads((run / "summary.json").read_text())
    assert summary["K"] == 2 and summary["slots"] == 30
    assert summary["bound_lhs"] <= summary["bound_rhs"]
    assert summary["max_abs_alpha"] >= 0 and summary["max_abs_beta"] >= 0
    rows = np.loadtxt(run / "trace.csv", delimiter=",", skiprows=1)
    assert rows.shape[0] == 60
    assert main(["report", "--out", str(run)]) == 0
    for name in ("fig_voltage", "fig_signals", "fig_dual_step"):
        assert (run / f"{name}.csv").exists()


def test_online_requires_timeline(tmp_path):
    assert main(["online", "--out", str(tmp_path)]) == 2


def test_report_without_run(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 2


def test_synth_ieee37(tmp_path):
    tl, fd = tmp_path / "tl.csv", tmp_path / "f.json"
    assert main(["synth", "--slots", "3", "--out", str(tl), "--write-feeder", str(fd),
                 "--volatility", "0.05", "--seed", "3"]) == 0
    assert main(["validate", "--feeder", str(fd), "--timeline", str(tl)]) == 0
    first = tl.read_text()
    main(["synth", "--slots", "3", "--out", str(tl), "--volatility", "0.05", "--seed", "3"])
    assert tl.read_text() == first


def test_console_module():
    out = subprocess.run([sys.executable, "-m", "gridincentive.cli", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("validate", "certify", "offline", "online", "synth", "report"):
        assert cmd in out.stdout
