"""Experiment orchestration: trajectory ensembles, master-equation runs and cross-engine comparisons.

Output directory layout (every file carries the schema version):

    config.json          resolved config
    trajectories.jsonl   one JSON object per trajectory, in stream-index order
    histogram.csv        first-click-time histogram over [0, horizon]
    summary.json         :class:`RunSummary`
    *.qarr               array dumps (see :mod:`qevents.arrays`)
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .arrays import write_array
from .config import TRAJECTORY_ENGINES, ExperimentConfig
from .liouville import DensityPair, MasterEquation, compare_ensemble
from .pdp import SCHEMA_VERSION
from .propertime import click_statistics_equivalence
from .rng import RngStream
from .stats import exponential_ks

log = logging.getLogger(__name__)

OUT_ENV = "QEVENTS_OUT"
MAX_ABORT_FRACTION = 0.01


class RunError(RuntimeError):
    """An experiment could not complete."""


@dataclass
class RunSummary:
    engine: str
    name: str
    seed: int
    n_trajectories: int
    horizon: float
    fingerprint: str
    detector_counts: list[int] = field(default_factory=list)
    detector_rates: list[float] = field(default_factory=list)
    total_events: list[int] = field(default_factory=list)
    no_click_count: int = 0
    no_click_fraction: float = 0.0
    n_aborted: int = 0
    first_click_mean: float | None = None
    first_click_var: float | None = None
    first_click_stderr: float | None = None
    histogram_edges: list[float] = field(default_factory=list)
    histogram_counts: list[int] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    throughput: float = 0.0
    warnings: list[str] = field(default_factory=list)
    schema: str = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunSummary":
        if d.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {d.get('schema')!r}, expected {SCHEMA_VERSION!r}")
        return cls(**d)


def output_dir(cfg: ExperimentConfig, override=None) -> Path:
    """``override`` beats the environment variable, which beats the config."""
    return Path(override or os.environ.get(OUT_ENV) or cfg.output_dir)


def _write_histogram(path: Path, summary: RunSummary) -> None:
    lines = [f"# schema={SCHEMA_VERSION}", "bin_start,bin_end,count"]
    e = summary.histogram_edges
    for a, b, n in zip(e, e[1:], summary.histogram_counts):
        lines.append(f"{a!r},{b!r},{n}")
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _sanitize(obj):
    """Replace non-finite floats by None so that files stay strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.generic):
        return _sanitize(obj.item())
    return obj


def _new_summary(cfg: ExperimentConfig) -> RunSummary:
    n_det = len(cfg.detectors)
    edges = np.linspace(0.0, cfg.horizon, cfg.histogram_bins + 1)
    return RunSummary(cfg.engine, cfg.name, cfg.seed, cfg.n_trajectories, cfg.horizon, cfg.fingerprint(),
                      [0] * n_det, [0.0] * n_det, [0] * n_det,
                      histogram_edges=edges.tolist(), histogram_counts=[0] * cfg.histogram_bins)


def _tally(summary: RunSummary, first: np.ndarray, detector: np.ndarray, completed: np.ndarray) -> None:
    """Fill counts, rates and the first-click histogram from per-trajectory first clicks.

    ``detector`` is -1 for trajectories without a click; ``completed`` masks out aborted ones.
    """
    first, detector = first[completed], detector[completed]
    n = int(completed.sum())
    counts = np.bincount(detector[detector >= 0], minlength=len(summary.detector_counts))
    summary.detector_counts = counts.astype(int).tolist()
    summary.no_click_count = int(np.sum(detector < 0))
    if n:
        summary.detector_rates = (counts / n).tolist()
        summary.no_click_fraction = summary.no_click_count / n
    clicked = first[detector >= 0]
    hist, _ = np.histogram(clicked, bins=np.asarray(summary.histogram_edges))
    summary.histogram_counts = hist.astype(int).tolist()
    if clicked.size:
        summary.first_click_mean = float(clicked.mean())
        summary.first_click_var = float(clicked.var(ddof=1)) if clicked.size > 1 else 0.0
        summary.first_click_stderr = float(math.sqrt(summary.first_click_var / clicked.size))
        summary.metrics["ks_exponential_fitted_rate"] = exponential_ks(clicked, 1.0 / summary.first_click_mean)


def _run_trajectories(cfg: ExperimentConfig, out: Path, threads: int, summary: RunSummary) -> None:
    engine = cfg.build_engine()
    n = cfg.n_trajectories

    def one(i):
        try:
            return engine.run(RngStream(cfg.seed, i), max_events=cfg.max_events), None
        except Exception as exc:  # collected per trajectory; the run fails only above the abort budget
            return None, f"{type(exc).__name__}: {exc}"

    first = np.full(n, np.inf)
    detector = np.full(n, -1)
    completed = np.ones(n, dtype=bool)
    with ThreadPoolExecutor(max_workers=threads) as pool, (out / "trajectories.jsonl").open("w") as fh:
        # map yields in index order, so the single writer keeps the file order fixed
        for i, (rec, err) in enumerate(pool.map(one, range(n))):
            if rec is None:
                completed[i] = False
                fh.write(json.dumps({"schema": SCHEMA_VERSION, "seed": cfg.seed, "stream_index": i,
                                     "aborted": True, "error": err}, sort_keys=True) + "\n")
                continue
            fh.write(json.dumps(_sanitize(rec.to_dict()), sort_keys=True) + "\n")
            if rec.events:
                first[i], detector[i] = rec.events[0].time, rec.events[0].detector
            for ev in rec.events:
                summary.total_events[ev.detector] += 1
    summary.n_aborted = int(n - completed.sum())
    if summary.n_aborted > MAX_ABORT_FRACTION * n:
        raise RunError(f"{summary.n_aborted} of {n} trajectories aborted (limit {MAX_ABORT_FRACTION:.0%})")
    _tally(summary, first, detector, completed)
    write_array(out / "initial_state.qarr", engine.initial_state())


def _master_run(cfg: ExperimentConfig, engine):
    master = MasterEquation.from_grid(engine.grid, engine.config.potential, engine.config.mass, engine.detectors)
    drift = [0.0]

    def monitor(t, dp):
        drift[0] = max(drift[0], abs(dp.total_trace - 1.0))

    times = cfg.resolved_sample_times()
    states = master.evolve(DensityPair.pure(engine.initial_state(), engine.grid.dx), times, dt=engine.dt,
                           monitor=monitor)
    return times, states, drift[0]


def _run_liouville(cfg: ExperimentConfig, out: Path, summary: RunSummary) -> None:
    times, states, drift = _master_run(cfg, cfg.build_engine())
    rows = [{"time": t, "trace_rho0": float(np.trace(dp.rho0).real), "trace_rho1": float(np.trace(dp.rho1).real),
             "min_eigenvalue": dp.min_eigenvalue()} for t, dp in zip(times, states)]
    summary.metrics = {"rows": rows, "max_trace_drift": drift}
    write_array(out / "rho0_final.qarr", states[-1].rho0)
    write_array(out / "rho1_final.qarr", states[-1].rho1)


def _run_compare_ensemble(cfg: ExperimentConfig, out: Path, threads: int, summary: RunSummary) -> None:
    engine = cfg.build_engine()
    if cfg.n_trajectories == 0:
        return
    records: list = []
    summary.metrics = compare_ensemble(engine, cfg.n_trajectories, cfg.seed, cfg.resolved_sample_times(), threads,
                                       records_out=records)
    summary.metrics["max_trace_distance"] = max(
        max(r["trace_distance_rho0"], r["trace_distance_rho1"]) for r in summary.metrics["rows"])
    first = np.array([r.events[0].time if r.events else np.inf for r in records])
    detector = np.array([r.events[0].detector if r.events else -1 for r in records])
    _tally(summary, first, detector, np.ones(len(records), dtype=bool))
    for r in records:
        for ev in r.events:
            summary.total_events[ev.detector] += 1


def _run_compare_propertime(cfg: ExperimentConfig, out: Path, threads: int, summary: RunSummary) -> None:
    # the coordinate-time ensemble gets its own seed, derived by spawning from the base seed
    seed_coord = int(RngStream(cfg.seed, 0).child(1).generator().integers(0, 2**63))
    clicks: dict = {}
    summary.metrics = click_statistics_equivalence(cfg.propertime_config(), cfg.n_trajectories, cfg.seed,
                                                   seed_coord, threads, cfg.alpha, clicks_out=clicks)
    if cfg.n_trajectories:
        first, detector = clicks["proper"]
        _tally(summary, first, detector, np.ones(first.size, dtype=bool))
        summary.total_events = list(summary.detector_counts)


def run_experiment(cfg: ExperimentConfig, out=None, threads: int | None = None) -> RunSummary:
    """Execute ``cfg`` and write its artifacts; returns the summary also stored in summary.json."""
    threads = max(1, threads or cfg.threads)
    out = output_dir(cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    summary = _new_summary(cfg)
    start = time.perf_counter()
    if cfg.n_trajectories == 0 and cfg.engine != "liouville":
        msg = "n_trajectories = 0: nothing to run, summary is empty"
        log.warning(msg)
        summary.warnings.append(msg)
    if cfg.engine == "liouville":
        summary.n_trajectories = 0
    if cfg.engine in TRAJECTORY_ENGINES:
        _run_trajectories(cfg, out, threads, summary)
    elif cfg.engine == "liouville":
        _run_liouville(cfg, out, summary)
    elif cfg.engine == "compare-ensemble":
        _run_compare_ensemble(cfg, out, threads, summary)
    else:
        _run_compare_propertime(cfg, out, threads, summary)
    summary.wall_clock = time.perf_counter() - start
    summary.throughput = cfg.n_trajectories / summary.wall_clock if summary.wall_clock > 0 else 0.0
    _write_histogram(out / "histogram.csv", summary)
    _write_json(out / "summary.json", _sanitize(summary.to_dict()))
    return summary
