import json
import subprocess
import sys

import pytest

from conftest import FIXTURES
from mpbs.cli import main


def cli(*args):
    return subprocess.run([sys.executable, "-m", "mpbs", *args], capture_output=True, text=True)


def test_run_writes_outputs(tmp_path):
    r = cli("run", "--feeder", str(FIXTURES / "fuse_risk_feeder.json"), "--scenario", str(FIXTURES / "fuse_risk_scenario.json"), "--out", str(tmp_path))
    assert r.returncode == 0, r.stderr
    assert "complete" in r.stdout
    for name in ("cranking_path.csv", "inrush_fuses.csv", "inrush_reclosers.csv", "energy.csv", "voltages.csv", "log.json"):
        assert (tmp_path / name).exists()


def test_no_mitigation_warns(tmp_path):
    r = cli(
        "run",
        "--feeder",
        str(FIXTURES / "fuse_risk_feeder.json"),
        "--scenario",
        str(FIXTURES / "fuse_risk_scenario.json"),
        "--out",
        str(tmp_path),
        "--no-mitigation",
    )
    assert r.returncode == 0
    assert "inrush-infeasible" in r.stderr


def test_missing_feeder_exit_code(tmp_path):
    assert main(["run", "--feeder", str(tmp_path / "nope.json"), "--scenario", str(FIXTURES / "fuse_risk_scenario.json"), "--out", str(tmp_path)]) == 3


def test_bad_tc_exit_code(tmp_path):
    args = ["run", "--feeder", str(FIXTURES / "fuse_risk_feeder.json"), "--scenario", str(FIXTURES / "fuse_risk_scenario.json")]
    assert main(args + ["--out", str(tmp_path), "--tc", "0"]) == 2
    assert main(args + ["--out", str(tmp_path), "--solver", "gurobi"]) == 2


def test_inrush_table(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert main(["inrush", "--feeder", str(FIXTURES / "bench_feeder.json"), "--block", "B1", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "theta_deg,iA,iB,iC,max,phase,wc"
    assert lines[1].startswith("0,644.016,")
    assert "theta_WC" in capsys.readouterr().err
    assert main(["inrush", "--feeder", str(FIXTURES / "bench_feeder.json"), "--block", "B9"]) == 2


def test_validate_clean(capsys):
    assert main(["validate", "--feeder", str(FIXTURES / "ieee123_feeder.json"), "--scenario", str(FIXTURES / "ieee123_scenario.json")]) == 0
    assert capsys.readouterr().out.startswith("0 violations")


def test_validate_names_violations(tmp_path, capsys):
    d = json.loads((FIXTURES / "fuse_risk_feeder.json").read_text())
    d["blocks"][2]["buses"].append("d")
    (tmp_path / "f.json").write_text(json.dumps(d))
    sc = json.loads((FIXTURES / "fuse_risk_scenario.json").read_text())
    sc["zip"] = {"kZ": 0.4, "kI": 0.4, "kP": 0.4}
    (tmp_path / "s.json").write_text(json.dumps(sc))
    assert main(["validate", "--feeder", str(tmp_path / "f.json"), "--scenario", str(tmp_path / "s.json")]) == 1
    out = capsys.readouterr().out
    assert "bus d" in out and "partition" in out and "ZIP" in out


def test_validate_bad_json(tmp_path, capsys):
    (tmp_path / "f.json").write_text("{not json")
    assert main(["validate", "--feeder", str(tmp_path / "f.json")]) == 1
    assert "1 violations" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [["--help"], ["run", "--help"]])
def test_help(argv):
    assert cli(*argv).returncode == 0
