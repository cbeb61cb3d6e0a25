import json
import subprocess
import sys

import pytest

from stlcbf.cli import main
from stlcbf.scenario import bundled_scenario

BALL = bundled_scenario("single_ball")


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


def ball_doc():
    return json.loads(BALL.read_text())


@pytest.fixture(scope="module")
def synthesized(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--scenario", str(BALL), "--out", str(d / "p.json")]) == 0
    assert main(["simulate", "--scenario", str(BALL), "--params", str(d / "p.json"), "--out", str(d / "t.csv")]) == 0
    return d


def test_synth_reports_constraints(tmp_path, capsys):
    assert main(["synth", "--scenario", str(BALL), "--out", str(tmp_path / "p.json")]) == 0
    out = capsys.readouterr().out
    assert "feasible=True" in out and "b(x0,0)>=chi" in out
    assert json.loads((tmp_path / "p.json").read_text())["groups"]["task"]["feasible"]


def test_synth_infeasible_exit_1(tmp_path):
    doc = ball_doc()
    doc["groups"][0]["chi"] = 0.5
    doc["groups"][0]["synthesis"] = {"restarts": 2, "max_evals": 300}
    sc = write_json(tmp_path / "s.json", doc)
    assert main(["synth", "--scenario", str(sc), "--out", str(tmp_path / "p.json"), "--feasibility", "4.9"]) == 1


def test_synth_unsatisfiable_exit_2(tmp_path, capsys):
    doc = ball_doc()
    doc["groups"][0]["formula"] = "F[0,10](ball([[0,0],[0,0]] * x + [2,0], 1))"
    sc = write_json(tmp_path / "s.json", doc)
    assert main(["synth", "--scenario", str(sc), "--out", str(tmp_path / "p.json"), "--feasibility", "0.1"]) == 2
    assert "not satisfiable" in capsys.readouterr().err


def test_synth_invalid_scenario_exit_2(tmp_path):
    sc = write_json(tmp_path / "s.json", {"agents": []})
    assert main(["synth", "--scenario", str(sc), "--out", str(tmp_path / "p.json")]) == 2
    assert main(["synth", "--scenario", str(tmp_path / "missing.json"), "--out", str(tmp_path / "p.json")]) == 2


def test_simulate_outputs(synthesized):
    csv = synthesized / "t.csv"
    summary = json.loads((synthesized / "t.summary.json").read_text())
    assert summary["rho_at_0"] >= 0.249
    assert summary["aborted"] is None
    assert csv.read_text().startswith("t,state_x1_0,")


def test_simulate_byte_identical(synthesized, tmp_path):
    out = tmp_path / "again.csv"
    assert main(["simulate", "--scenario", str(BALL), "--params", str(synthesized / "p.json"), "--out", str(out)]) == 0
    assert out.read_bytes() == (synthesized / "t.csv").read_bytes()


def test_simulate_hash_mismatch_exit_2(synthesized, tmp_path):
    doc = ball_doc()
    doc["groups"][0]["formula"] = "G[7.5,10](ball([0,0], 4))"
    sc = write_json(tmp_path / "s.json", doc)
    assert main(["simulate", "--scenario", str(sc), "--params", str(synthesized / "p.json"), "--out", str(tmp_path / "t.csv")]) == 2


def test_simulate_short_horizon_exit_2(synthesized, tmp_path):
    doc = ball_doc()
    doc["timing"]["horizon"] = 8.0
    sc = write_json(tmp_path / "s.json", doc)
    assert main(["simulate", "--scenario", str(sc), "--params", str(synthesized / "p.json"), "--out", str(tmp_path / "t.csv")]) == 2


def test_simulate_abort_exit_1(synthesized, tmp_path):
    doc = ball_doc()
    doc["agents"][0]["x0"] = [40.0, 0.0]
    sc = write_json(tmp_path / "s.json", doc)
    # parameters depend on x0 through the hash, so re-synthesize with the far start
    p = tmp_path / "p.json"
    assert main(["synth", "--scenario", str(sc), "--out", str(p)]) in (0, 1)
    params = json.loads(p.read_text())
    params["groups"]["task"]["barrier"]["state_bound"] = 5.0
    p.write_text(json.dumps(params))
    assert main(["simulate", "--scenario", str(sc), "--params", str(p), "--out", str(tmp_path / "t.csv")]) == 1


def test_monitor_exit_codes(synthesized, capsys):
    csv = str(synthesized / "t.csv")
    assert main(["monitor", csv, "--scenario", str(BALL)]) == 0
    assert "rho: 0.50" in capsys.readouterr().out
    assert main(["monitor", csv, "--formula", "F[0,3](ball(x1, 1))"]) == 1
    assert main(["monitor", csv, "--formula", "G[0,20](ball(x1, 100))"]) == 2
    assert main(["monitor", csv, "--formula", "G[0,1](ball(x1, 100))", "--at", "9.5"]) == 2
    assert main(["monitor", csv, "--formula", "G[0,1](ball(x1, 100))", "--at", "2"]) == 0
    assert main(["monitor", csv]) == 2


def test_monitor_truncated_file(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,state_x1_0\n0,1,2\n")
    assert main(["monitor", str(bad), "--formula", "G[0,1](ball(x1, 1))"]) == 2


@pytest.mark.parametrize("kind", ["barrier", "paths", "inputs"])
def test_plot(synthesized, tmp_path, kind):
    out = tmp_path / f"{kind}.svg"
    assert main(["plot", str(synthesized / "t.csv"), "--kind", kind, "--out", str(out), "--scenario", str(BALL)]) == 0
    svg = out.read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg
    if kind == "paths":
        assert 'id="path_x1"' in svg


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "stlcbf", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("synth", "simulate", "monitor", "plot"):
        assert cmd in proc.stdout
