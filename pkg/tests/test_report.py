import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qevents.config import validate_dict
from qevents.experiment import run_experiment
from qevents.report import CSV_FIELDS, load_summary, merge, render_csv, report
from qevents.stats import pooled_moments

BASE = {"engine": "nonrel", "grid": {"n_points": 32, "x_min": -8, "x_max": 8}, "mass": "inf",
        "detectors": [{"shape": "constant", "params": {"strength": 1.0}}], "horizon": 20.0, "n_trajectories": 50}


def _first_clicks(out):
    return [json.loads(x)["events"][0]["time"] for x in (out / "trajectories.jsonl").read_text().splitlines()]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(0, 10), min_size=1, max_size=30), min_size=1, max_size=5))
def test_pooled_moments_equal_concatenation(groups):
    triples = [(len(g), np.mean(g), np.var(g, ddof=1) if len(g) > 1 else 0.0) for g in groups]
    n, mean, var = pooled_moments(triples)
    flat = np.concatenate(groups)
    assert n == flat.size
    assert mean == pytest.approx(flat.mean(), abs=1e-9)
    assert var == pytest.approx(flat.var(ddof=1) if flat.size > 1 else 0.0, abs=1e-8)


def test_single_summary(tmp_path):
    run_experiment(validate_dict({**BASE, "seed": 1, "name": "solo"}), tmp_path / "a")
    text = report([tmp_path / "a"])
    assert "== engine: nonrel ==" in text and "-- solo" in text and "trajectories:        50" in text


def test_seeds_pooled_like_one_sample(tmp_path):
    dirs = []
    for seed in (1, 2, 3):
        dirs.append(tmp_path / f"s{seed}")
        run_experiment(validate_dict({**BASE, "seed": seed}), dirs[-1])
    (row,) = merge([load_summary(d) for d in dirs])
    t = np.concatenate([_first_clicks(d) for d in dirs])
    assert row.seeds == [1, 2, 3] and row.n_trajectories == 150 and row.first_click_n == t.size
    assert row.first_click_mean == pytest.approx(t.mean(), rel=1e-12)
    assert row.first_click_stderr == pytest.approx(t.std(ddof=1) / np.sqrt(t.size), rel=1e-10)


def test_mixed_engines_grouped_and_csv(tmp_path):
    run_experiment(validate_dict({**BASE, "seed": 1}), tmp_path / "n")
    run_experiment(validate_dict({**BASE, "engine": "liouville", "mass": 1.0, "horizon": 2.0}), tmp_path / "l")
    run_experiment(validate_dict({**BASE, "seed": 2, "horizon": 10.0}), tmp_path / "n2")
    csv_path = tmp_path / "r.csv"
    text = report([tmp_path / "n", tmp_path / "l", tmp_path / "n2"], csv_path)
    assert text.count("== engine: nonrel ==") == 1 and "== engine: liouville ==" in text
    rows = list(csv.DictReader(io.StringIO(csv_path.read_text())))
    assert tuple(rows[0]) == CSV_FIELDS
    assert [r["engine"] for r in rows] == ["nonrel", "nonrel", "liouville"]
    assert "max_trace_drift" in rows[2]["metrics"]
    assert render_csv([]).strip() == ",".join(CSV_FIELDS)


def test_unknown_schema_rejected(tmp_path):
    run_experiment(validate_dict({**BASE, "seed": 1}), tmp_path)
    d = json.loads((tmp_path / "summary.json").read_text())
    d["schema"] = "qevents/2"
    (tmp_path / "summary.json").write_text(json.dumps(d))
    with pytest.raises(ValueError, match="schema"):
        load_summary(tmp_path)
