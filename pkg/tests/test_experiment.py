import filecmp
import json

import numpy as np
import pytest

from qevents import experiment
from qevents.arrays import read_array
from qevents.config import validate_dict
from qevents.experiment import OUT_ENV, RunError, RunSummary, output_dir, run_experiment
from qevents.pdp import SCHEMA_VERSION

GRID = {"n_points": 32, "x_min": -8, "x_max": 8}
GAUSS = {"shape": "gaussian", "params": {"center": 1.0, "width": 1.0, "strength": 1.0}}


def _cfg(**kw):
    d = {"engine": "nonrel", "grid": GRID, "packet": {"center": 0, "width": 1, "momentum": 0.3},
         "detectors": [GAUSS, {"shape": "gaussian", "params": {"center": -2.0, "width": 1.0, "strength": 0.5}}],
         "horizon": 3.0, "n_trajectories": 60, "seed": 5}
    d.update(kw)
    return validate_dict(d)


def _check_schema(out):
    for line in (out / "trajectories.jsonl").read_text().splitlines():
        assert json.loads(line)["schema"] == SCHEMA_VERSION
    assert json.loads((out / "summary.json").read_text())["schema"] == SCHEMA_VERSION
    assert json.loads((out / "config.json").read_text())["schema"] == SCHEMA_VERSION
    assert (out / "histogram.csv").read_text().splitlines()[0] == f"# schema={SCHEMA_VERSION}"


def test_counts_add_up_and_files_written(tmp_path):
    s = run_experiment(_cfg(), tmp_path)
    assert sum(s.detector_counts) + s.no_click_count + s.n_aborted == 60
    assert s.histogram_edges[0] == 0.0 and s.histogram_edges[-1] == 3.0
    assert sum(s.histogram_counts) == sum(s.detector_counts)
    assert all(t >= c for t, c in zip(s.total_events, s.detector_counts))
    _check_schema(tmp_path)
    lines = (tmp_path / "trajectories.jsonl").read_text().splitlines()
    assert [json.loads(x)["stream_index"] for x in lines] == list(range(60))
    assert read_array(tmp_path / "initial_state.qarr").shape == (32,)
    assert RunSummary.from_dict(json.loads((tmp_path / "summary.json").read_text())).seed == 5


def test_zero_trajectories_gives_empty_summary_with_warning(tmp_path):
    s = run_experiment(_cfg(n_trajectories=0), tmp_path)
    assert s.detector_counts == [0, 0] and s.first_click_mean is None
    assert s.warnings and "n_trajectories = 0" in s.warnings[0]
    assert (tmp_path / "trajectories.jsonl").read_text() == ""


def test_thread_count_does_not_change_output(tmp_path):
    run_experiment(_cfg(), tmp_path / "a", threads=1)
    run_experiment(_cfg(), tmp_path / "b", threads=3)
    assert filecmp.cmp(tmp_path / "a" / "trajectories.jsonl", tmp_path / "b" / "trajectories.jsonl", shallow=False)


def test_seed_changes_output(tmp_path):
    run_experiment(_cfg(), tmp_path / "a")
    run_experiment(_cfg(seed=6), tmp_path / "b")
    assert not filecmp.cmp(tmp_path / "a" / "trajectories.jsonl", tmp_path / "b" / "trajectories.jsonl",
                           shallow=False)


class _Flaky:
    def __init__(self, engine, bad):
        self.engine, self.bad = engine, bad

    def run(self, stream, **kw):
        if stream.stream_index in self.bad:
            raise FloatingPointError("norm became non-finite")
        return self.engine.run(stream, **kw)

    def initial_state(self):
        return self.engine.initial_state()


def _patch_engine(monkeypatch, bad):
    orig = experiment.ExperimentConfig.build_engine
    monkeypatch.setattr(experiment.ExperimentConfig, "build_engine", lambda self: _Flaky(orig(self), bad))


def test_aborts_within_budget_are_recorded(monkeypatch, tmp_path):
    _patch_engine(monkeypatch, {7})
    s = run_experiment(_cfg(n_trajectories=200), tmp_path)
    assert s.n_aborted == 1
    assert sum(s.detector_counts) + s.no_click_count + s.n_aborted == 200
    rec = json.loads((tmp_path / "trajectories.jsonl").read_text().splitlines()[7])
    assert rec["aborted"] and "FloatingPointError" in rec["error"]


def test_aborts_above_budget_fail(monkeypatch, tmp_path):
    _patch_engine(monkeypatch, {1, 2, 3})
    with pytest.raises(RunError):
        run_experiment(_cfg(n_trajectories=200), tmp_path)


def test_liouville_run(tmp_path):
    s = run_experiment(_cfg(engine="liouville", sample_times=[1.0, 3.0]), tmp_path)
    rows = s.metrics["rows"]
    assert [r["time"] for r in rows] == [1.0, 3.0]
    assert s.metrics["max_trace_drift"] < 1e-10
    assert s.n_trajectories == 0
    rho0 = read_array(tmp_path / "rho0_final.qarr")
    assert rho0.shape == (32, 32)
    np.testing.assert_allclose(rho0, rho0.conj().T, atol=1e-12)


def test_compare_ensemble_run(tmp_path):
    s = run_experiment(_cfg(engine="compare-ensemble", detectors=[GAUSS], n_trajectories=200), tmp_path)
    assert len(s.metrics["rows"]) == 3
    assert 0 <= s.metrics["max_trace_distance"] < 0.3
    assert sum(s.detector_counts) + s.no_click_count == 200


def test_output_dir_precedence(monkeypatch, tmp_path):
    cfg = _cfg(output_dir=str(tmp_path / "cfg"))
    monkeypatch.delenv(OUT_ENV, raising=False)
    assert output_dir(cfg) == tmp_path / "cfg"
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert output_dir(cfg) == tmp_path / "env"
    assert output_dir(cfg, tmp_path / "cli") == tmp_path / "cli"
