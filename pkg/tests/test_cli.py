import json

import pytest

from empire.cli import main
from empire.experiments import build_example
from empire.tabular import save_model


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


def test_solve_example(capsys):
    code, out = run(capsys, "solve", "--gamma", "0.9", "--lambda", "1")
    assert code == 0
    q = json.loads(out.out)["q"]
    assert q[0][0] == pytest.approx(9.75, abs=1e-8)


def test_solve_model_file(capsys, tmp_path):
    path = tmp_path / "m.json"
    save_model(build_example(0.9, 1.0, "mrp"), path)
    code, out = run(capsys, "solve", "--model", str(path))
    assert code == 0
    assert json.loads(out.out)["value"] == pytest.approx([9.75, 9.0])


def test_complexity(capsys):
    code, out = run(capsys, "complexity")
    doc = json.loads(out.out)
    assert code == 0 and 0 < doc["complexity"] <= doc["conservative_bound"]


def test_single_runs(capsys):
    code, out = run(capsys, "empire-pe", "--gamma", "0.9")
    assert code == 0
    assert out.out.startswith("trial_id,epoch,delta_m,N_m,h_m,eps_fast,eps_slow,cumulative_samples,terminated")
    code, out = run(capsys, "empire-q", "--max-samples", "1000")
    assert code == 2
    assert '"terminated": false' in out.out


def test_wrong_model_kind(capsys):
    code, out = run(capsys, "empire-pe", "--mode", "mdp")
    assert code == 1 and "MRP" in out.err


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["battery"])
    assert exc.value.code == 1
    code, out = run(capsys, "solve", "--model", "/nonexistent.json")
    assert code == 1


def test_battery_and_plotdata(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"gammas": [0.9], "lambdas": [1.0, 1.5], "trials": 2, "seed": 1}))
    code, out = run(capsys, "battery", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 0 and "config_hash=" in out.out
    code, out = run(capsys, "plotdata", "--out", str(tmp_path / "o"))
    assert code == 0
    assert (tmp_path / "o" / "fig1b.csv").exists() and (tmp_path / "o" / "fig2.csv").exists()


def test_battery_budget_exhaustion(capsys, tmp_path):
    code, _ = run(
        capsys, "battery", "--gamma", "0.9", "--lambda", "1", "--trials", "1", "--max-samples", "5000",
        "--out", str(tmp_path),
    )
    assert code == 2
    assert (tmp_path / "trials.csv").read_text().count("\n") == 3


def test_q_battery_defaults_to_tighter_tolerance(capsys, tmp_path):
    code, out = run(capsys, "battery", "--mode", "q", "--gamma", "0.9", "--lambda", "1", "--trials", "1", "--out", str(tmp_path))
    assert code == 0
    assert '"eps": 0.05' in (tmp_path / "trials.csv").read_text().splitlines()[0]
