"""Experiment configuration: JSON schema, validation with line numbers, engine construction.

A config is a JSON object. Every key is optional except ``engine``; unknown
keys are rejected so that typos surface at load time. Example::

    {
      "engine": "nonrel",
      "grid": {"n_points": 128, "x_min": -20, "x_max": 20},
      "packet": {"center": 0, "width": 1, "momentum": 0},
      "detectors": [{"shape": "constant", "params": {"strength": 1.0}}],
      "horizon": 20,
      "n_trajectories": 10000,
      "seed": 1
    }

Engines: ``nonrel``, ``propertime`` and ``relativistic`` run click
trajectories; ``liouville`` integrates the ensemble master equation;
``compare-ensemble`` scores a trajectory ensemble against the master
equation; ``compare-propertime`` compares proper-time and coordinate-time
click statistics.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .detectors import SHAPES, DetectorSpec
from .grids import Grid1D, Grid2D, PotentialSpec
from .liouville import DENSE_CAP
from .nonrel import NonrelConfig, NonrelEngine, PacketSpec
from .pdp import SCHEMA_VERSION
from .propertime import ProperTimeConfig, ProperTimeEngine, TimeProfile
from .relativistic import WEIGHTINGS, RelConfig, RelEngine, SpinorPacket

ENGINES = ("nonrel", "propertime", "relativistic", "liouville", "compare-ensemble", "compare-propertime")
TRAJECTORY_ENGINES = ("nonrel", "propertime", "relativistic")
TWO_D_ENGINES = ("propertime", "relativistic", "compare-propertime")
POTENTIALS = ("zero", "harmonic", "barrier", "tabulated")
U64_MAX = 2**64 - 1

PACKET_KEYS = {"center", "width", "momentum"}
SPINOR_PACKET_KEYS = {"x_center", "x_width", "t_center", "t_width", "momentum", "energy", "spinor"}


class ConfigError(ValueError):
    """Invalid configuration; ``violations`` lists every problem found."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


@dataclass
class ExperimentConfig:
    engine: str
    grid: dict = field(default_factory=lambda: {"n_points": 64, "x_min": -16.0, "x_max": 16.0})
    grid_t: dict | None = None
    packet: dict = field(default_factory=dict)
    time_profile: dict = field(default_factory=lambda: {"center": 0.0, "width": 1.0})
    potential: dict = field(default_factory=lambda: {"kind": "zero", "params": {}})
    mass: float = 1.0
    dirac_mass: float = 1.0
    evolution_mass: float | None = None
    weighting: str = "lambda"
    detectors: list = field(default_factory=list)
    horizon: float = 10.0
    dt: float | None = None
    n_trajectories: int = 1000
    seed: int = 0
    max_events: int | None = None
    sample_times: list | None = None
    histogram_bins: int = 50
    alpha: float = 0.05
    threads: int = 1
    output_dir: str = "qevents-out"
    name: str = ""

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = SCHEMA_VERSION
        if math.isinf(d["mass"]):
            d["mass"] = "inf"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def fingerprint(self) -> str:
        """Canonical description of the physics, ignoring seed, threads and output location."""
        d = self.to_dict()
        for k in ("seed", "threads", "output_dir", "name"):
            d.pop(k)
        return json.dumps(d, sort_keys=True)

    # -- domain objects ----------------------------------------------------
    def grid1d(self) -> Grid1D:
        return Grid1D(int(self.grid["n_points"]), float(self.grid["x_min"]), float(self.grid["x_max"]))

    def grid2d(self) -> Grid2D:
        gt = self.grid_t or self.grid
        return Grid2D(self.grid1d(), Grid1D(int(gt["n_points"]), float(gt["x_min"]), float(gt["x_max"])))

    def detector_specs(self) -> tuple[DetectorSpec, ...]:
        return tuple(DetectorSpec.from_dict(d) for d in self.detectors)

    def potential_spec(self) -> PotentialSpec:
        return PotentialSpec(self.potential.get("kind", "zero"), dict(self.potential.get("params", {})))

    def nonrel_config(self) -> NonrelConfig:
        return NonrelConfig(self.grid1d(), self.detector_specs(), PacketSpec(**self.packet), self.potential_spec(),
                            self.mass, self.horizon, self.dt)

    def propertime_config(self) -> ProperTimeConfig:
        return ProperTimeConfig(self.grid2d(), self.detector_specs(), PacketSpec(**self.packet),
                                TimeProfile(**self.time_profile), self.potential_spec(), self.mass,
                                self.horizon, self.dt)

    def rel_config(self) -> RelConfig:
        packet = dict(self.packet)
        if isinstance(packet.get("spinor"), list):
            packet["spinor"] = tuple(packet["spinor"])
        return RelConfig(self.grid2d(), self.detector_specs(), self.dirac_mass, self.evolution_mass,
                         packet=SpinorPacket(**packet), horizon=self.horizon, dt=self.dt, weighting=self.weighting)

    def build_engine(self):
        """Engine producing trajectories for this config (nonrel engine for Liouville-type runs)."""
        if self.engine in ("nonrel", "liouville", "compare-ensemble"):
            return NonrelEngine(self.nonrel_config())
        if self.engine in ("propertime", "compare-propertime"):
            with warnings.catch_warnings():
                warnings.simplefilter("error")
                return ProperTimeEngine(self.propertime_config())
        return RelEngine(self.rel_config())

    def resolved_sample_times(self) -> list[float]:
        if self.sample_times is not None:
            return [float(s) for s in self.sample_times]
        return [self.horizon / 4, self.horizon / 2, self.horizon]


# -- loading and validation ----------------------------------------------------

def _key_lines(text: str) -> dict[tuple, int]:
    """Line number of every key and array element of a syntactically valid JSON document."""
    decoder = json.JSONDecoder()
    lines: dict[tuple, int] = {}

    def line_of(i):
        return text.count("\n", 0, i) + 1

    def ws(i):
        while i < len(text) and text[i] in " \t\r\n":
            i += 1
        return i

    def value(i, path):
        i = ws(i)
        lines.setdefault(path, line_of(i))
        if text[i] == "{":
            i = ws(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                key, i = json.decoder.scanstring(text, ws(i) + 1)
                lines[path + (key,)] = line_of(i)
                i = ws(i)
                i = value(i + 1, path + (key,))
                i = ws(i)
                if text[i] == "}":
                    return i + 1
                i += 1
        if text[i] == "[":
            i = ws(i + 1)
            if text[i] == "]":
                return i + 1
            k = 0
            while True:
                i = value(i, path + (k,))
                i = ws(i)
                if text[i] == "]":
                    return i + 1
                i, k = i + 1, k + 1
        return decoder.raw_decode(text, i)[1]

    value(0, ())
    return lines


class _Collector:
    def __init__(self, lines: dict[tuple, int]):
        self.lines = lines
        self.items: list[str] = []

    def add(self, path: tuple, message: str):
        probe = path
        while probe and probe not in self.lines:
            probe = probe[:-1]
        line = self.lines.get(probe, 1)
        name = "".join(f"[{p}]" if isinstance(p, int) else (f".{p}" if i else p) for i, p in enumerate(path))
        self.items.append(f"line {line}: {name or '<config>'}: {message}")


def _number(c: _Collector, d: dict, key: str, path: tuple, *, positive=False, nonneg=False,
            allow_none=False, allow_inf=False):
    v = d.get(key)
    p = path + (key,)
    if v is None:
        if not allow_none:
            c.add(p, "is required")
        return None
    if allow_inf and v == "inf":
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        c.add(p, f"must be a finite number, got {v!r}")
        return None
    if positive and not v > 0:
        c.add(p, f"must be positive, got {v}")
    if nonneg and v < 0:
        c.add(p, f"must be >= 0, got {v}")
    return float(v)


def _integer(c: _Collector, d: dict, key: str, lo: int, hi: int | None = None, allow_none=False):
    v = d.get(key)
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        c.add((key,), f"must be an integer, got {v!r}")
        return None
    if v < lo or (hi is not None and v > hi):
        c.add((key,), f"must lie in [{lo}, {hi if hi is not None else 'inf'}], got {v}")
    return v


def _check_keys(c: _Collector, d, allowed: set, path: tuple):
    if not isinstance(d, dict):
        c.add(path, "must be a JSON object")
        return False
    for k in sorted(set(d) - allowed):
        c.add(path + (k,), "unknown key")
    return True


def _check_grid(c: _Collector, g, path: tuple):
    if not _check_keys(c, g, {"n_points", "x_min", "x_max"}, path):
        return
    n = g.get("n_points")
    if isinstance(n, bool) or not isinstance(n, int) or n < 2:
        c.add(path + ("n_points",), f"must be an integer >= 2, got {n!r}")
    elif n & (n - 1):
        c.add(path + ("n_points",), f"spectral backend needs a power of two, got {n}")
    lo = _number(c, g, "x_min", path)
    hi = _number(c, g, "x_max", path)
    if lo is not None and hi is not None and not hi > lo:
        c.add(path + ("x_max",), f"must exceed x_min ({lo}), got {hi}")


def _check_detector(c: _Collector, d, path: tuple):
    if not _check_keys(c, d, {"shape", "params", "reusable", "dead_time"}, path):
        return
    shape = d.get("shape", "gaussian")
    if shape not in SHAPES:
        c.add(path + ("shape",), f"must be one of {list(SHAPES)}, got {shape!r}")
        return
    params = d.get("params", {})
    pp = path + ("params",)
    if not isinstance(params, dict):
        c.add(pp, "must be a JSON object")
        return
    needed = {"gaussian": {"center", "width", "strength"}, "indicator": {"a", "b", "strength"},
              "constant": {"strength"}, "tabulated": {"values"}}[shape]
    _check_keys(c, params, needed, pp)
    if shape == "tabulated":
        vals = params.get("values")
        if not isinstance(vals, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
            c.add(pp + ("values",), "must be a list of numbers")
        elif any(v < 0 or not math.isfinite(v) for v in vals):
            c.add(pp + ("values",), "must be finite and >= 0")
    else:
        if "strength" in params:
            _number(c, params, "strength", pp, nonneg=True)
        if shape == "gaussian":
            if "center" in params:
                _number(c, params, "center", pp)
            if "width" not in params:
                c.add(pp + ("width",), "is required for a gaussian detector")
            else:
                _number(c, params, "width", pp, positive=True)
        if shape == "indicator":
            a = _number(c, params, "a", pp)
            b = _number(c, params, "b", pp)
            if a is not None and b is not None and not b > a:
                c.add(pp + ("b",), f"must exceed a ({a})")
    if "reusable" in d and not isinstance(d["reusable"], bool):
        c.add(path + ("reusable",), "must be true or false")
    if "dead_time" in d:
        _number(c, d, "dead_time", path, nonneg=True)


def validate_dict(d, lines: dict[tuple, int] | None = None) -> ExperimentConfig:
    """Check a decoded config and return it with defaults applied, or raise :class:`ConfigError`."""
    c = _Collector(lines or {})
    if not isinstance(d, dict):
        raise ConfigError(["line 1: <config>: must be a JSON object"])
    allowed = {f.name for f in fields(ExperimentConfig)} | {"schema"}
    _check_keys(c, d, allowed, ())
    if "schema" in d and d["schema"] != SCHEMA_VERSION:
        c.add(("schema",), f"unsupported schema version {d['schema']!r}, expected {SCHEMA_VERSION!r}")
    engine = d.get("engine")
    if engine not in ENGINES:
        c.add(("engine",), f"must be one of {list(ENGINES)}, got {engine!r}")
    defaults = ExperimentConfig(engine=engine or "nonrel")
    merged = {f.name: d.get(f.name, getattr(defaults, f.name)) for f in fields(ExperimentConfig)}

    _check_grid(c, merged["grid"], ("grid",))
    if merged["grid_t"] is not None:
        _check_grid(c, merged["grid_t"], ("grid_t",))
    elif engine in TWO_D_ENGINES:
        merged["grid_t"] = dict(merged["grid"]) if isinstance(merged["grid"], dict) else None

    relativistic = engine == "relativistic"
    if _check_keys(c, merged["packet"], SPINOR_PACKET_KEYS if relativistic else PACKET_KEYS, ("packet",)):
        pk = merged["packet"]
        for k in pk:
            if k == "spinor":
                s = pk[k]
                ok = s in ("upper", "on-shell") or (isinstance(s, list) and len(s) == 4
                                                   and all(isinstance(v, (int, float)) for v in s))
                if not ok:
                    c.add(("packet", k), "must be 'upper', 'on-shell' or a list of four real numbers")
            elif k == "energy" and pk[k] is None:
                continue
            elif k in PACKET_KEYS | SPINOR_PACKET_KEYS:
                _number(c, pk, k, ("packet",), positive=k.endswith("width"))
    if _check_keys(c, merged["time_profile"], {"center", "width"}, ("time_profile",)):
        _number(c, merged["time_profile"], "center", ("time_profile",), allow_none=True)
        _number(c, merged["time_profile"], "width", ("time_profile",), positive=True, allow_none=True)

    if _check_keys(c, merged["potential"], {"kind", "params"}, ("potential",)):
        kind = merged["potential"].get("kind", "zero")
        if kind not in POTENTIALS:
            c.add(("potential", "kind"), f"must be one of {list(POTENTIALS)}, got {kind!r}")
        if not isinstance(merged["potential"].get("params", {}), dict):
            c.add(("potential", "params"), "must be a JSON object")

    merged["mass"] = _number(c, merged, "mass", (), positive=True, allow_inf=True)
    merged["dirac_mass"] = _number(c, merged, "dirac_mass", (), nonneg=True)
    merged["evolution_mass"] = _number(c, merged, "evolution_mass", (), positive=True, allow_none=True)
    if merged["weighting"] not in WEIGHTINGS:
        c.add(("weighting",), f"must be one of {list(WEIGHTINGS)}, got {merged['weighting']!r}")

    dets = merged["detectors"]
    if not isinstance(dets, list) or not dets:
        c.add(("detectors",), "must be a non-empty list")
    else:
        for i, det in enumerate(dets):
            _check_detector(c, det, ("detectors", i))

    merged["horizon"] = _number(c, merged, "horizon", (), positive=True)
    merged["dt"] = _number(c, merged, "dt", (), positive=True, allow_none=True)
    merged["n_trajectories"] = _integer(c, merged, "n_trajectories", 0)
    merged["seed"] = _integer(c, merged, "seed", 0, U64_MAX)
    merged["max_events"] = _integer(c, merged, "max_events", 1, allow_none=True)
    merged["histogram_bins"] = _integer(c, merged, "histogram_bins", 1)
    merged["threads"] = _integer(c, merged, "threads", 1)
    alpha = _number(c, merged, "alpha", (), positive=True)
    if alpha is not None and not alpha < 1:
        c.add(("alpha",), f"must lie in (0, 1), got {alpha}")
    merged["alpha"] = alpha
    if not isinstance(merged["output_dir"], str) or not merged["output_dir"]:
        c.add(("output_dir",), "must be a non-empty string")
    if not isinstance(merged["name"], str):
        c.add(("name",), "must be a string")

    st = merged["sample_times"]
    if st is not None:
        if not isinstance(st, list) or not all(isinstance(s, (int, float)) and not isinstance(s, bool) for s in st):
            c.add(("sample_times",), "must be a list of numbers")
        else:
            st = [float(s) for s in st]
            if any(b <= a for a, b in zip(st, st[1:])):
                c.add(("sample_times",), "must be strictly ascending")
            h = merged["horizon"]
            if st and (st[0] < 0 or (h is not None and st[-1] > h)):
                c.add(("sample_times",), "must lie within [0, horizon]")
            merged["sample_times"] = st

    if engine in ("liouville", "compare-ensemble") and isinstance(merged["grid"], dict):
        n = merged["grid"].get("n_points")
        if isinstance(n, int) and n > DENSE_CAP:
            c.add(("grid", "n_points"), f"dense master equation is capped at {DENSE_CAP} points, got {n}")
        if isinstance(dets, list) and engine == "compare-ensemble" and len(dets) != 1:
            c.add(("detectors",), "compare-ensemble needs exactly one detector")

    if c.items:
        raise ConfigError(c.items)

    cfg = ExperimentConfig(**merged)
    # Module-level preconditions that need the assembled objects (stability bound, box size, norms).
    try:
        cfg.build_engine()
    except (ValueError, Warning) as exc:
        raise ConfigError([f"line {c.lines.get(('engine',), 1)}: <config>: {exc}"]) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read, parse and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read: {exc.strerror}"]) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno}, column {exc.colno}: parse error: {exc.msg}"]) from None
    return validate_dict(data, _key_lines(text))


def loads_config(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno}, column {exc.colno}: parse error: {exc.msg}"]) from None
    return validate_dict(data, _key_lines(text))


def save_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(cfg.to_json() + "\n")
    return path


__all__ = ["ConfigError", "ENGINES", "ExperimentConfig", "load_config", "loads_config", "save_config",
           "validate_dict"]
