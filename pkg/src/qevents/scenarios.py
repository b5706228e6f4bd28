"""Built-in named scenarios, one or more per acceptance criterion.

A scenario is either an experiment config evaluated after :func:`run_experiment`
or a self-contained deterministic check. :func:`run_scenario` returns a
:class:`CheckResult` carrying the measured values and thresholds.
"""
from __future__ import annotations

import copy
import filecmp
import json
import math
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import ExperimentConfig, validate_dict
from .detectors import DetectorSpec
from .experiment import RunSummary, run_experiment
from .grids import Grid1D, Grid2D, SpinorField2D, gaussian_packet
from .nonrel import HybridState1D, find_jump_time
from .numerics import ETA, FINITE_DIFFERENCE, GAMMA, SPECTRAL, apply_dirac, apply_hamiltonian, indefinite_product
from .propertime import ProperTimeStepper, TimeProfile, factorized_solution, product_state, _x_inputs
from .relativistic import RelConfig, apply_coupling, apply_dirac_squared, coupling_expectation
from .stats import exponential_ks, ks_critical


@dataclass
class CheckResult:
    scenario: str
    criteria: tuple[int, ...]
    passed: bool
    measured: dict = field(default_factory=dict)

    def line(self) -> str:
        crit = ",".join(str(c) for c in self.criteria)
        values = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.measured.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {crit} {self.scenario}: {values}"


@dataclass(frozen=True)
class Scenario:
    name: str
    criteria: tuple[int, ...]
    description: str
    config: dict | None = None
    evaluate: Callable | None = None
    check: Callable | None = None

    def experiment_config(self, **overrides) -> ExperimentConfig:
        if self.config is None:
            raise ValueError(f"scenario {self.name!r} is a deterministic check without an experiment config")
        d = copy.deepcopy(self.config)
        d["name"] = self.name
        d.update({k: v for k, v in overrides.items() if v is not None})
        return validate_dict(d)


# -- experiment-backed evaluations ---------------------------------------------

def _clicks(out: Path) -> list[list[dict]]:
    with (out / "trajectories.jsonl").open() as fh:
        return [json.loads(line).get("events", []) for line in fh]


def _eval_exp_law(summary: RunSummary, out: Path, rate: float = 1.0) -> dict:
    first = np.array([ev[0]["time"] for ev in _clicks(out) if ev])
    ks = exponential_ks(first, rate)
    crit = ks_critical(summary.n_trajectories, 0.01)
    mean = float(first.mean()) if first.size else math.nan
    return {"passed": bool(abs(mean * rate - 1) <= 0.03 and ks["statistic"] < crit and
                           summary.no_click_count == 0),
            "mean": mean, "ks": ks["statistic"], "ks_critical_1pct": crit,
            "no_click": summary.no_click_count, "wall_clock_s": summary.wall_clock}


def _eval_ensemble(summary: RunSummary, out: Path) -> dict:
    m = summary.metrics
    worst = m["max_trace_distance"]
    return {"passed": bool(worst < 0.05 and len(m["rows"]) == 3), "max_trace_distance": worst,
            "max_trace_drift": m["max_trace_drift"], "wall_clock_s": summary.wall_clock}


def _eval_trace(summary: RunSummary, out: Path) -> dict:
    drift = summary.metrics["max_trace_drift"]
    return {"passed": bool(drift < 1e-8), "max_trace_drift": drift}


def _eval_propertime(summary: RunSummary, out: Path) -> dict:
    m = summary.metrics
    return {"passed": bool(m["max_intensity_deviation"] < 1e-8 and m["ks_statistic"] < m["ks_critical"]),
            "max_intensity_deviation": m["max_intensity_deviation"], "ks": m["ks_statistic"],
            "ks_critical_5pct": m["ks_critical"]}


def _eval_symmetric(summary: RunSummary, out: Path) -> dict:
    simplex = 0.0
    for events in _clicks(out):
        for ev in events:
            p = np.asarray(ev["probabilities"])
            simplex = max(simplex, abs(p.sum() - 1.0))
            if np.any(p < 0) or np.any(p > 1):
                simplex = math.inf
    n_left, n_right = summary.detector_counts
    n = n_left + n_right
    sigma = math.sqrt(n * 0.25)
    z = abs(n_left - n / 2) / sigma if n else math.inf
    return {"passed": bool(simplex <= 1e-12 and z < 3 and n >= MIN_SYMMETRY_CLICKS),
            "simplex_error": simplex, "clicks": n, "fraction_left": n_left / n if n else math.nan, "z": z}


# -- deterministic checks --------------------------------------------------------

def check_jump_time(**_) -> dict:
    grid = Grid1D(64, -8.0, 8.0)
    det = DetectorSpec("constant", {"strength": 1.0})
    state = HybridState1D(gaussian_packet(grid, 0.0, 1.0, 0.0), (det,))
    t1, _ = find_jump_time(state, 0.5, horizon=5.0, mass=math.inf)
    err = abs(t1 - math.log(2.0))
    return {"passed": bool(err < 1e-6), "t1": t1, "error": err}


def check_factorization(**_) -> dict:
    grid = Grid2D(Grid1D(64, -10.0, 10.0), Grid1D(64, -10.0, 10.0))
    dets = (DetectorSpec("gaussian", {"center": 1.5, "width": 1.0, "strength": 1.0}),)
    profile = TimeProfile(-3.0, 0.5)
    psi0 = gaussian_packet(grid.grid_x, -1.0, 1.0, 0.5)
    tau, n = 1.0, 2000
    v, rate = _x_inputs(grid.grid_x, dets, None)
    stepper = ProperTimeStepper(grid, v, rate, 1.0, tau / n)
    state = product_state(grid, profile, psi0).amplitudes
    for _ in range(n):
        state = stepper.step(state, tau / n)
    exact = factorized_solution(profile, psi0, tau, grid, dets).amplitudes
    dev = float(np.max(np.abs(state - exact)))
    return {"passed": bool(dev < 1e-6), "max_deviation": dev, "peak": float(np.max(np.abs(exact)))}


def check_positivity(n_fields: int = 1000, seed: int = 7, **_) -> dict:
    rng = np.random.default_rng(seed)
    grid = Grid2D(Grid1D(8, -4.0, 4.0), Grid1D(8, -4.0, 4.0))
    worst_rel, min_val = 0.0, math.inf
    for _ in range(n_fields):
        amps = rng.normal(size=(8, 8, 4)) + 1j * rng.normal(size=(8, 8, 4))
        psi = SpinorField2D(grid, amps)
        det = DetectorSpec("tabulated", {"values": rng.uniform(0.0, 2.0, size=8).tolist()})
        indefinite = indefinite_product(psi, apply_coupling(psi, det, 2))
        euclid = coupling_expectation(psi, det, 2)
        min_val = min(min_val, indefinite.real)
        worst_rel = max(worst_rel, abs(indefinite - euclid) / max(abs(euclid), 1e-300))
    return {"passed": bool(min_val >= 0 and worst_rel < 1e-12), "min_value": min_val, "max_rel_diff": worst_rel}


def check_hermiticity(n_pairs: int = 20, seed: int = 11, **_) -> dict:
    rng = np.random.default_rng(seed)
    grid = Grid2D(Grid1D(16, -4.0, 4.0), Grid1D(16, -4.0, 4.0))
    cfg = RelConfig(grid, (DetectorSpec("constant", {"strength": 0.0}),), dirac_mass=0.7, evolution_mass=1.0)
    worst = 0.0
    for _ in range(n_pairs):
        phi, psi = (SpinorField2D(grid, rng.normal(size=(16, 16, 4)) + 1j * rng.normal(size=(16, 16, 4)))
                    for _ in range(2))
        for op in (lambda f: apply_dirac(f, cfg.dirac_mass),
                   lambda f: apply_dirac_squared(f, cfg, "spectral"),
                   lambda f: apply_dirac_squared(f, cfg, "double")):
            a, b = op(phi), op(psi)
            lhs, rhs = indefinite_product(phi, b), indefinite_product(a, psi)
            scale = phi.euclidean_norm2() ** 0.5 * b.euclidean_norm2() ** 0.5
            worst = max(worst, abs(lhs - rhs) / scale)
    return {"passed": bool(worst < 1e-10), "max_rel_mismatch": worst}


def check_gamma(**_) -> dict:
    mismatches = 0
    for mu in range(2):
        for nu in range(2):
            anti = GAMMA[mu] @ GAMMA[nu] + GAMMA[nu] @ GAMMA[mu]
            mismatches += int(np.count_nonzero(anti != 2 * ETA[mu, nu] * np.eye(4)))
    return {"passed": mismatches == 0, "mismatched_entries": mismatches}


def _backend_errors(sizes=(32, 64, 128, 256)) -> tuple[list[float], float]:
    errs = []
    for n in sizes:
        grid = Grid1D(n, -12.0, 12.0)
        psi = gaussian_packet(grid, 0.3, 1.0, 1.0)
        a = apply_hamiltonian(psi, backend=SPECTRAL).amplitudes
        b = apply_hamiltonian(psi, backend=FINITE_DIFFERENCE).amplitudes
        errs.append(float(np.max(np.abs(a - b))))
    slope = -np.polyfit(np.log(sizes), np.log(errs), 1)[0]
    return errs, float(slope)


def check_backends(**_) -> dict:
    errs, slope = _backend_errors()
    return {"passed": bool(abs(slope - 2.0) < 0.1), "slope": slope, "finest_error": errs[-1]}


def check_determinism(threads: int | None = None, **_) -> dict:
    """Rerun two scenarios with 1 and 4 threads; trajectory files must be byte-identical."""
    identical = True
    with tempfile.TemporaryDirectory() as tmp:
        for name, n in (("exp-law-nonrel", 400), ("symmetric-detectors-rel", 40)):
            sc = SCENARIOS[name]
            outs = []
            for th in (1, 4):
                cfg = sc.experiment_config(n_trajectories=n, threads=th, seed=12345)
                out = Path(tmp) / f"{name}-{th}"
                run_experiment(cfg, out)
                outs.append(out / "trajectories.jsonl")
            identical &= filecmp.cmp(*outs, shallow=False)
    return {"passed": bool(identical), "byte_identical": identical}


# -- registry ----------------------------------------------------------------------

_CONSTANT = {"shape": "constant", "params": {"strength": 1.0}}
_MIRROR_PAIR = [{"shape": "gaussian", "params": {"center": -3.0, "width": 3.0, "strength": 1.0}},
                {"shape": "gaussian", "params": {"center": 3.0, "width": 3.0, "strength": 1.0}}]
# The symmetry criterion is stated in clicks; ensembles are sized a little above it
# because a small fraction of trajectories survives to the horizon.
MIN_SYMMETRY_CLICKS = 10_000

SCENARIOS: dict[str, Scenario] = {s.name: s for s in [
    Scenario("exp-law-nonrel", (1,), "H = 0, constant coupling kappa = 1: first clicks are Exp(1)",
             {"engine": "nonrel", "grid": {"n_points": 64, "x_min": -16, "x_max": 16}, "mass": "inf",
              "detectors": [_CONSTANT], "horizon": 25, "n_trajectories": 10000, "seed": 1},
             evaluate=_eval_exp_law),
    Scenario("jump-time-ln2", (2,), "threshold p = 0.5 at kappa = 1 is crossed at ln 2", check=check_jump_time),
    Scenario("ensemble-liouville", (3,), "trajectory ensemble vs master equation on a 64-point grid",
             {"engine": "compare-ensemble", "grid": {"n_points": 64, "x_min": -16, "x_max": 16},
              "packet": {"center": 0, "width": 1, "momentum": 0},
              "detectors": [{"shape": "gaussian", "params": {"center": 1.5, "width": 1.0, "strength": 1.0}}],
              "horizon": 7.5, "sample_times": [1.8, 3.7, 7.3], "n_trajectories": 5000, "seed": 3},
             evaluate=_eval_ensemble),
    Scenario("liouville-trace", (4,), "trace of rho0 + rho1 stays 1 along a master-equation run",
             {"engine": "liouville", "grid": {"n_points": 64, "x_min": -16, "x_max": 16},
              "packet": {"center": -2, "width": 1, "momentum": 1},
              "detectors": [{"shape": "gaussian", "params": {"center": 2.0, "width": 1.0, "strength": 1.5}},
                            {"shape": "indicator", "params": {"a": -8, "b": -5, "strength": 0.8}}],
              "horizon": 10, "sample_times": [2.5, 5, 10], "n_trajectories": 0},
             evaluate=_eval_trace),
    Scenario("propertime-factorization", (5,), "proper-time flow matches the product closed form at tau = 1",
             check=check_factorization),
    Scenario("propertime-equivalence", (6,), "proper-time and coordinate-time clicks follow one Poisson process",
             {"engine": "compare-propertime", "grid": {"n_points": 64, "x_min": -16, "x_max": 16},
              "grid_t": {"n_points": 64, "x_min": -16, "x_max": 16},
              "packet": {"center": -1, "width": 1, "momentum": 0.5}, "time_profile": {"center": -6, "width": 1},
              "detectors": [{"shape": "gaussian", "params": {"center": 1.5, "width": 1.0, "strength": 1.0}}],
              "horizon": 6, "n_trajectories": 10000, "seed": 6},
             evaluate=_eval_propertime),
    Scenario("rel-positivity", (7,), "<Psi, G^2 Psi> equals sum g^2 |P+ Psi|^2 >= 0 on random fields",
             check=check_positivity),
    Scenario("indefinite-hermiticity", (8,), "D and D^2 are self-adjoint for the indefinite product",
             check=check_hermiticity),
    Scenario("gamma-algebra", (9,), "gamma matrices satisfy the Clifford relations exactly", check=check_gamma),
    Scenario("exp-law-rel", (10,), "P+ packet under constant kappa = 1: relativistic clicks are Exp(1)",
             {"engine": "relativistic", "grid": {"n_points": 32, "x_min": -8, "x_max": 8},
              "grid_t": {"n_points": 32, "x_min": -8, "x_max": 8}, "dirac_mass": 0.0, "evolution_mass": 1.0,
              "packet": {"spinor": "upper"}, "detectors": [_CONSTANT], "horizon": 25, "max_events": 1,
              "n_trajectories": 10000, "seed": 10},
             evaluate=_eval_exp_law),
    Scenario("symmetric-detectors-nonrel", (11,), "mirror-image detectors fire 50/50; probabilities on the simplex",
             {"engine": "nonrel", "grid": {"n_points": 64, "x_min": -16, "x_max": 16},
              "packet": {"center": 0, "width": 1, "momentum": 0},
              "detectors": _MIRROR_PAIR,
              "horizon": 40, "max_events": 1, "n_trajectories": 10200, "seed": 11},
             evaluate=_eval_symmetric),
    Scenario("symmetric-detectors-rel", (11,), "relativistic mirror-image detectors fire 50/50",
             {"engine": "relativistic", "grid": {"n_points": 32, "x_min": -12, "x_max": 12},
              "grid_t": {"n_points": 32, "x_min": -8, "x_max": 8}, "dirac_mass": 0.0, "evolution_mass": 1.0,
              "packet": {"spinor": "upper"},
              "detectors": _MIRROR_PAIR,
              "horizon": 15, "max_events": 1, "n_trajectories": 10200, "seed": 111},
             evaluate=_eval_symmetric),
    Scenario("determinism", (12,), "same seed, different thread counts: byte-identical trajectory files",
             check=check_determinism),
    Scenario("backend-agreement", (13,), "spectral vs finite-difference H converge at second order",
             check=check_backends),
]}


def run_scenario(name: str, out=None, seed: int | None = None, threads: int | None = None,
                 n_trajectories: int | None = None) -> CheckResult:
    """Run a named scenario and evaluate its acceptance criterion."""
    try:
        sc = SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {', '.join(SCENARIOS)}") from None
    if sc.check is not None:
        measured = sc.check(threads=threads)
    else:
        cfg = sc.experiment_config(seed=seed, threads=threads, n_trajectories=n_trajectories)
        if out is None:
            with tempfile.TemporaryDirectory() as tmp:
                summary = run_experiment(cfg, Path(tmp))
                measured = sc.evaluate(summary, Path(tmp))
        else:
            summary = run_experiment(cfg, out)
            measured = sc.evaluate(summary, Path(out))
    passed = measured.pop("passed")
    return CheckResult(name, sc.criteria, passed, measured)
