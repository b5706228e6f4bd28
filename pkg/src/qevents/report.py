"""Merge run summaries into plain-text and CSV tables.

Summaries are grouped by engine. Within an engine, summaries with the same
physics fingerprint (config minus seed, threads, output location) are one
scenario; their first-click statistics are pooled as if the trajectories had
been drawn in a single run.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

from .experiment import RunSummary
from .pdp import SCHEMA_VERSION
from .stats import pooled_moments

CSV_FIELDS = ("schema", "engine", "scenario", "seeds", "n_trajectories", "no_click_count", "no_click_fraction",
              "detector_counts", "first_click_n", "first_click_mean", "first_click_stderr", "metrics")


@dataclass
class ScenarioRow:
    engine: str
    scenario: str
    seeds: list[int]
    n_trajectories: int
    no_click_count: int
    detector_counts: list[int]
    first_click_n: int
    first_click_mean: float | None
    first_click_stderr: float | None
    metrics: list[dict]

    @property
    def no_click_fraction(self) -> float | None:
        return self.no_click_count / self.n_trajectories if self.n_trajectories else None


def load_summary(path) -> RunSummary:
    path = Path(path)
    if path.is_dir():
        path = path / "summary.json"
    data = json.loads(path.read_text())
    if data.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema version {data.get('schema')!r}, expected {SCHEMA_VERSION!r}")
    return RunSummary.from_dict(data)


def merge(summaries: list[RunSummary]) -> list[ScenarioRow]:
    """One row per (engine, scenario), grouped by engine, each in first-seen order."""
    groups: dict[tuple[str, str], list[RunSummary]] = {}
    for s in summaries:
        groups.setdefault((s.engine, s.fingerprint), []).append(s)
    engines = list(dict.fromkeys(s.engine for s in summaries))
    rows = []
    for (engine, _), group in sorted(groups.items(), key=lambda kv: engines.index(kv[0][0])):
        clicked = [sum(s.detector_counts) for s in group]
        n, mean, var = pooled_moments(
            (k, s.first_click_mean, s.first_click_var or 0.0) for k, s in zip(clicked, group)
            if s.first_click_mean is not None)
        n_det = max(len(s.detector_counts) for s in group)
        counts = [sum(s.detector_counts[i] for s in group if i < len(s.detector_counts)) for i in range(n_det)]
        rows.append(ScenarioRow(
            engine=engine,
            scenario=group[0].name or f"scenario-{len(rows) + 1}",
            seeds=[s.seed for s in group],
            n_trajectories=sum(s.n_trajectories for s in group),
            no_click_count=sum(s.no_click_count for s in group),
            detector_counts=counts,
            first_click_n=n,
            first_click_mean=mean,
            first_click_stderr=None if var is None else (var / n) ** 0.5,
            metrics=[_scalar_metrics(s.metrics) for s in group],
        ))
    return rows


def _scalar_metrics(metrics: dict, prefix: str = "") -> dict:
    """Flatten nested metric dicts to scalar entries; per-time rows are indexed."""
    out = {}
    for k, v in metrics.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_scalar_metrics(v, key + "."))
        elif isinstance(v, list) and v and isinstance(v[0], dict):
            for i, row in enumerate(v):
                out.update(_scalar_metrics(row, f"{key}[{i}]."))
        elif isinstance(v, (int, float, str)) or v is None:
            out[key] = v
    return out


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def render_text(rows: list[ScenarioRow]) -> str:
    lines = [f"qevents report ({SCHEMA_VERSION})"]
    for engine in dict.fromkeys(r.engine for r in rows):
        lines += ["", f"== engine: {engine} =="]
        for r in (r for r in rows if r.engine == engine):
            lines.append(f"-- {r.scenario}")
            lines.append(f"   seeds:               {', '.join(str(s) for s in r.seeds)}")
            lines.append(f"   trajectories:        {r.n_trajectories}")
            lines.append(f"   clicks per detector: {r.detector_counts}")
            lines.append(f"   no-click fraction:   {_fmt(r.no_click_fraction)}")
            lines.append(f"   first click mean:    {_fmt(r.first_click_mean)} +- {_fmt(r.first_click_stderr)}"
                         f" (n = {r.first_click_n})")
            for seed, m in zip(r.seeds, r.metrics):
                for k, v in m.items():
                    lines.append(f"   [seed {seed}] {k} = {_fmt(v)}")
    return "\n".join(lines) + "\n"


def render_csv(rows: list[ScenarioRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([SCHEMA_VERSION, r.engine, r.scenario, " ".join(map(str, r.seeds)), r.n_trajectories,
                    r.no_click_count, _fmt(r.no_click_fraction), " ".join(map(str, r.detector_counts)),
                    r.first_click_n, _fmt(r.first_click_mean), _fmt(r.first_click_stderr),
                    json.dumps(r.metrics, sort_keys=True)])
    return buf.getvalue()


def report(paths, csv_path=None) -> str:
    """Text report for the summaries at ``paths`` (files or run directories); optionally also write CSV."""
    rows = merge([load_summary(p) for p in paths])
    if csv_path is not None:
        Path(csv_path).write_text(render_csv(rows))
    return render_text(rows)
