import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qevents.config import ConfigError, ExperimentConfig, load_config, loads_config, save_config, validate_dict
from qevents.pdp import SCHEMA_VERSION

DET = [{"shape": "constant", "params": {"strength": 1.0}}]

BAD_STRENGTH = """{
  "engine": "nonrel",
  "grid": {"n_points": 64, "x_min": -16, "x_max": 16},
  "detectors": [
    {"shape": "gaussian",
     "params": {"center": 0, "width": 1, "strength": -1}}
  ]
}
"""


def test_detectors_required():
    with pytest.raises(ConfigError) as err:
        validate_dict({"engine": "nonrel"})
    assert "detectors" in err.value.violations[0]


def test_minimal_config_gets_defaults():
    cfg = validate_dict({"engine": "nonrel", "detectors": DET})
    assert cfg.grid["n_points"] == 64 and cfg.seed == 0 and cfg.threads == 1
    assert cfg.resolved_sample_times() == [cfg.horizon / 4, cfg.horizon / 2, cfg.horizon]


def test_negative_strength_names_field_and_line():
    with pytest.raises(ConfigError) as err:
        loads_config(BAD_STRENGTH)
    (msg,) = err.value.violations
    assert msg.startswith("line 6:")
    assert "detectors[0].params.strength" in msg


def test_all_violations_reported_together():
    with pytest.raises(ConfigError) as err:
        validate_dict({"engine": "nonrel", "grid": {"n_points": 100, "x_min": 1, "x_max": 0}, "horizon": -1})
    text = "\n".join(err.value.violations)
    assert "n_points" in text and "x_max" in text and "horizon" in text


@pytest.mark.parametrize("patch, field", [
    ({"engine": "quantum"}, "engine"),
    ({"colour": 1}, "colour"),
    ({"seed": -1}, "seed"),
    ({"seed": 2**64}, "seed"),
    ({"n_trajectories": 1.5}, "n_trajectories"),
    ({"schema": "qevents/99"}, "schema"),
    ({"sample_times": [3, 1]}, "sample_times"),
    ({"potential": {"kind": "wormhole"}}, "potential"),
    ({"detectors": [{"shape": "blob", "params": {}}]}, "detectors[0]"),
])
def test_invalid_fields_rejected(patch, field):
    with pytest.raises(ConfigError) as err:
        validate_dict({"engine": "nonrel", **patch})
    assert any(field in v for v in err.value.violations)


def test_dense_cap_for_master_equation():
    with pytest.raises(ConfigError):
        validate_dict({"engine": "liouville", "grid": {"n_points": 4096, "x_min": -10, "x_max": 10}})


def test_unstable_dt_becomes_config_error():
    with pytest.raises(ConfigError):
        validate_dict({"engine": "nonrel", "dt": 10.0, "detectors": DET})


def test_parse_error_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "engine": "nonrel",\n  "seed": ,\n}\n')
    with pytest.raises(ConfigError) as err:
        load_config(p)
    assert err.value.violations[0].startswith("line 3, column")


def test_infinite_mass_round_trip(tmp_path):
    cfg = validate_dict({"engine": "nonrel", "mass": "inf", "detectors": DET})
    assert math.isinf(cfg.mass)
    back = load_config(save_config(cfg, tmp_path / "c.json"))
    assert back == cfg
    assert json.loads((tmp_path / "c.json").read_text())["schema"] == SCHEMA_VERSION


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), n=st.integers(0, 10**6), horizon=st.floats(0.1, 100),
       strength=st.floats(0, 5), threads=st.integers(1, 16), engine=st.sampled_from(["nonrel", "liouville"]))
def test_round_trip(seed, n, horizon, strength, threads, engine):
    cfg = validate_dict({"engine": engine, "seed": seed, "n_trajectories": n, "horizon": horizon,
                         "threads": threads, "grid": {"n_points": 32, "x_min": -8, "x_max": 8},
                         "detectors": [{"shape": "gaussian", "params": {"center": 0.5, "width": 1.0,
                                                                         "strength": strength}}]})
    assert loads_config(cfg.to_json()) == cfg


def test_fingerprint_ignores_seed_and_threads():
    a = validate_dict({"engine": "nonrel", "seed": 1, "threads": 1, "detectors": DET})
    b = validate_dict({"engine": "nonrel", "seed": 2, "threads": 4, "output_dir": "/x", "detectors": DET})
    c = validate_dict({"engine": "nonrel", "horizon": 11, "detectors": DET})
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


def test_relativistic_packet_and_grid_t():
    cfg = validate_dict({"engine": "relativistic", "grid": {"n_points": 16, "x_min": -6, "x_max": 6},
                         "packet": {"spinor": [1, 0, 0, 0]}, "detectors": [{"shape": "constant", "params": {}}]})
    assert isinstance(cfg, ExperimentConfig)
    with pytest.raises(ConfigError):
        validate_dict({"engine": "relativistic", "packet": {"center": 0}})
