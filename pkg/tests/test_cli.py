import json

import pytest

from qevents.cli import main
from qevents.experiment import OUT_ENV
from qevents.scenarios import SCENARIOS

CONFIG = {"engine": "nonrel", "grid": {"n_points": 32, "x_min": -8, "x_max": 8},
          "detectors": [{"shape": "gaussian", "params": {"center": 1, "width": 1, "strength": 1}}],
          "horizon": 2.0, "n_trajectories": 20, "seed": 3}


@pytest.fixture
def config_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(CONFIG, indent=2))
    return p


def test_run_and_report(config_path, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(config_path), "--out", str(out), "--seed", "9", "--threads", "2"]) == 0
    assert json.loads((out / "summary.json").read_text())["seed"] == 9
    assert main(["report", str(out), "--csv", str(tmp_path / "r.csv")]) == 0
    assert "== engine: nonrel ==" in capsys.readouterr().out
    assert (tmp_path / "r.csv").exists()


def test_env_output_dir(config_path, tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert main(["run", "--config", str(config_path)]) == 0
    assert (tmp_path / "env" / "summary.json").exists()


def test_validate(config_path, tmp_path, capsys):
    assert main(["validate", "--config", str(config_path)]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**CONFIG, "horizon": -1}, indent=2))
    assert main(["validate", "--config", str(bad)]) == 1
    assert "horizon" in capsys.readouterr().err


def test_missing_file_is_validation_error(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "nope.json")]) == 1


def test_bad_seed_rejected(config_path):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--config", str(config_path), "--seed", str(2**64)])
    assert exc.value.code == 2


def test_unknown_scenario(capsys):
    assert main(["run", "--scenario", "nope"]) == 1


def test_scenario_pass(capsys):
    assert main(["run", "--scenario", "gamma-algebra"]) == 0
    assert "[PASS] criterion 9" in capsys.readouterr().out


def test_runtime_error_exit_code(config_path, monkeypatch, tmp_path):
    def boom(*a, **k):
        raise RuntimeError("boom")
    monkeypatch.setattr("qevents.cli.run_experiment", boom)
    assert main(["run", "--config", str(config_path), "--out", str(tmp_path)]) == 2


def test_scenarios_list(capsys):
    assert main(["scenarios", "list"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in SCENARIOS)


def test_report_unknown_schema(tmp_path):
    p = tmp_path / "summary.json"
    p.write_text(json.dumps({"schema": "other/9"}))
    assert main(["report", str(p)]) == 1


def test_failing_scenario_exit_code(monkeypatch):
    from qevents.scenarios import CheckResult
    monkeypatch.setattr("qevents.cli.run_scenario", lambda *a, **k: CheckResult("gamma-algebra", (9,), False, {}))
    assert main(["run", "--scenario", "gamma-algebra"]) == 2
