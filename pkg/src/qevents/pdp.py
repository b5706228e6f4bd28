"""Engine-independent machinery for piecewise-deterministic click processes.

An engine supplies a damped propagator for every set of active detectors, the
monitored quadratic form (L2 norm or indefinite norm), per-detector rates and
the collapse map. This module turns those into the event-generating loop:
draw a uniform threshold p, follow the damped flow until the norm lost since
the last click reaches p, choose which detector fired, collapse, repeat.
"""
from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.optimize import brentq

from .rng import RngStream

log = logging.getLogger(__name__)

SCHEMA_VERSION = "qevents/1"

# Relative slack allowed for roundoff when checking that the monitored norm never grows.
MONOTONE_SLACK = 1e-10
CACHE_BUDGET_BYTES = 64 * 2**20


class PropagationError(RuntimeError):
    """Damped propagation produced a non-finite or growing norm."""


class DarkStateError(RuntimeError):
    """A click was scheduled but every detector rate vanishes."""


class Stepper(Protocol):
    def step(self, state: np.ndarray, h: float) -> np.ndarray: ...


class Engine(Protocol):
    detectors: Sequence
    dt: float
    horizon: float

    def initial_state(self) -> np.ndarray: ...
    def stepper(self, mask: tuple[bool, ...]) -> Stepper: ...
    def norm2(self, state: np.ndarray) -> float: ...
    def scale(self, state: np.ndarray) -> float: ...
    def weights(self, state: np.ndarray, mask: tuple[bool, ...]) -> np.ndarray: ...
    def collapse(self, state: np.ndarray, index: int) -> np.ndarray: ...
    def free(self, state: np.ndarray, duration: float) -> np.ndarray: ...
    def summary(self, state: np.ndarray) -> dict: ...


@dataclass
class ClickEvent:
    time: float
    detector: int
    pre_click_norm2: float
    probabilities: list[float]
    summary: dict

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "detector": self.detector,
            "pre_click_norm2": self.pre_click_norm2,
            "probabilities": self.probabilities,
            "summary": self.summary,
        }


@dataclass
class Sample:
    """State snapshot; ``state`` is normalized, ``clicks`` counts events up to ``time``."""

    time: float
    clicks: int
    state: np.ndarray


@dataclass
class TrajectoryRecord:
    horizon: float
    rng: RngStream
    events: list[ClickEvent] = field(default_factory=list)
    truncated: bool = False
    samples: list[Sample] = field(default_factory=list)

    @property
    def no_click(self) -> bool:
        return not self.events

    @property
    def click_times(self) -> list[float]:
        return [e.time for e in self.events]

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "seed": self.rng.seed,
            "stream_index": self.rng.stream_index,
            "horizon": self.horizon,
            "no_click": self.no_click,
            "truncated": self.truncated,
            "events": [e.to_dict() for e in self.events],
        }


@dataclass
class SeekResult:
    time: float
    state: np.ndarray
    clicked: bool


def _check(engine: Engine, before: float, after: float, state: np.ndarray, t: float) -> None:
    if not math.isfinite(after):
        raise PropagationError(f"non-finite norm at t={t:.6g} (previous norm2={before:.6g})")
    if after > before + MONOTONE_SLACK * max(1.0, engine.scale(state)):
        raise PropagationError(
            f"monitored norm increased from {before!r} to {after!r} at t={t:.6g}; "
            "positivity of the rate operator is broken"
        )


def _bisect_step(engine: Engine, stepper: Stepper, state: np.ndarray, h: float, target: float):
    """Partial step length s in (0, h] at which the monitored norm hits ``target``."""

    curve = stepper.norm_curve(state) if hasattr(stepper, "norm_curve") else None

    def f(s):
        if curve is not None:
            return curve(s) - target
        return engine.norm2(stepper.step(state, s)) - target

    f_hi = f(h)
    if f_hi == 0.0:
        s = h
    else:
        s = brentq(f, 0.0, h, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200)
    return s, stepper.step(state, s)


def _record_samples(engine, stepper, state, t, h, sample_times, clicks, out, t_stop=None):
    """Append samples with times in (t, t + h] (or (t, t_stop) when a click cuts the step)."""
    for s in sample_times:
        upper_ok = s < t_stop if t_stop is not None else s <= t + h
        if t < s and upper_ok:
            snap = state if s == t else stepper.step(state, s - t)
            n2 = engine.norm2(snap)
            out.append(Sample(s, clicks, snap / math.sqrt(n2)))


def seek(
    engine: Engine,
    stepper: Stepper,
    state: np.ndarray,
    t0: float,
    t_end: float,
    target: float,
    sample_times: Sequence[float] = (),
    clicks: int = 0,
    samples: list | None = None,
) -> SeekResult:
    """Follow the damped flow from ``t0`` until the monitored norm drops to ``target``.

    Returns the refined click time and state, or ``clicked=False`` with the
    (unnormalized) state at ``t_end``.
    """
    samples = samples if samples is not None else []
    n = engine.norm2(state)
    if n <= target:
        return SeekResult(t0, state, True)
    dt = engine.dt
    k = 0
    t = t0
    while t < t_end:
        t_next = min(t0 + (k + 1) * dt, t_end)
        h = t_next - t
        new = stepper.step(state, h)
        n_new = engine.norm2(new)
        _check(engine, n, n_new, new, t_next)
        if n_new <= target:
            s, hit = _bisect_step(engine, stepper, state, h, target)
            _record_samples(engine, stepper, state, t, h, sample_times, clicks, samples, t_stop=t + s)
            return SeekResult(t + s, hit, True)
        _record_samples(engine, stepper, state, t, h, sample_times, clicks, samples)
        state, n, t, k = new, n_new, t_next, k + 1
    return SeekResult(t_end, state, False)


def step_times(t0: float, t_end: float, dt: float) -> list[float]:
    """The step grid used by :func:`seek`: t0 + k dt, clipped at t_end."""
    times = [t0]
    k = 0
    while times[-1] < t_end:
        times.append(min(t0 + (k + 1) * dt, t_end))
        k += 1
    return times


class FlowCache:
    """Checkpointed damped flow from the initial state with every detector armed.

    Every trajectory starts on this same deterministic segment, so it is
    computed once; a trajectory only re-integrates at most ``stride`` steps
    from the nearest checkpoint. Replaying from a checkpoint performs exactly
    the same floating point operations as the sequential sweep.
    """

    def __init__(self, engine: Engine, mask: tuple[bool, ...]):
        self.engine = engine
        self.mask = mask
        self.stepper = engine.stepper(mask)
        state = engine.initial_state()
        dt, horizon = engine.dt, engine.horizon
        self.times = np.array(step_times(0.0, horizon, dt))
        n_steps = len(self.times) - 1
        self.stride = max(1, math.ceil((n_steps + 1) * state.nbytes / CACHE_BUDGET_BYTES))
        norms = [engine.norm2(state)]
        checkpoints = [state]
        for k in range(n_steps):
            new = self.stepper.step(state, self.times[k + 1] - self.times[k])
            n_new = engine.norm2(new)
            _check(engine, norms[-1], n_new, new, self.times[k + 1])
            norms.append(n_new)
            state = new
            if (k + 1) % self.stride == 0:
                checkpoints.append(state)
        self.norms = np.array(norms)
        self.checkpoints = checkpoints

    def state_at_step(self, k: int) -> np.ndarray:
        c = k // self.stride
        state = self.checkpoints[c]
        for j in range(c * self.stride, k):
            state = self.stepper.step(state, self.times[j + 1] - self.times[j])
        return state

    def seek(self, target: float, sample_times=(), samples: list | None = None) -> SeekResult:
        samples = samples if samples is not None else []
        engine = self.engine
        hits = np.nonzero(self.norms <= target)[0]
        if hits.size and hits[0] == 0:
            return SeekResult(0.0, self.state_at_step(0), True)
        if hits.size:
            last = int(hits[0])
            t = float(self.times[last - 1])
            base = self.state_at_step(last - 1)
            s, hit = _bisect_step(engine, self.stepper, base, float(self.times[last]) - t, target)
            result = SeekResult(t + s, hit, True)
        else:
            result = SeekResult(float(self.times[-1]), self.state_at_step(len(self.times) - 1), False)
        for s in sample_times:
            if 0.0 < s and (s < result.time if result.clicked else s <= result.time):
                j = int(np.searchsorted(self.times, s, side="right")) - 1
                base = self.state_at_step(j)
                snap = base if s == self.times[j] else self.stepper.step(base, s - float(self.times[j]))
                samples.append(Sample(float(s), 0, snap / math.sqrt(engine.norm2(snap))))
        return result


class CachedFlow:
    """Thread-safe lazy holder for the initial :class:`FlowCache`."""

    def __init__(self):
        self._lock = threading.Lock()
        self._cache: FlowCache | None = None

    def get(self, engine: Engine) -> FlowCache:
        with self._lock:
            if self._cache is None:
                mask = tuple(bool(d.active) for d in engine.detectors)
                self._cache = FlowCache(engine, mask)
            return self._cache


def select_detector(weights: np.ndarray, u: float) -> tuple[int, np.ndarray]:
    """Pick index i with probability weights[i] / sum(weights) using the uniform draw u."""
    total = float(np.sum(weights))
    if not total > 0.0:
        raise DarkStateError("click scheduled but every detector rate vanishes")
    probs = np.asarray(weights, dtype=float) / total
    cum = np.cumsum(probs)
    index = int(np.searchsorted(cum, u * cum[-1], side="right"))
    index = min(index, len(probs) - 1)
    while probs[index] == 0.0:
        index -= 1
    return index, probs


def run_pdp(
    engine: Engine,
    rng: RngStream,
    sample_times: Sequence[float] = (),
    max_events: int | None = None,
    cache: CachedFlow | None = None,
) -> TrajectoryRecord:
    """Simulate one trajectory of the click process up to the engine's horizon."""
    gen = rng.generator()
    sample_times = sorted(float(s) for s in sample_times)
    n_det = len(engine.detectors)
    active = [bool(d.active) for d in engine.detectors]
    rearm_at: list[float | None] = [None] * n_det
    record = TrajectoryRecord(horizon=engine.horizon, rng=rng)
    samples = record.samples
    horizon = engine.horizon

    state = engine.initial_state()
    t = 0.0
    if sample_times and sample_times[0] == 0.0:
        samples.append(Sample(0.0, 0, state / math.sqrt(engine.norm2(state))))
    target = None  # norm level that triggers the next click
    first_segment = True

    while t < horizon:
        if max_events is not None and len(record.events) >= max_events:
            record.truncated = True
            break
        pending = [r for r in rearm_at if r is not None]
        seg_end = min([horizon, *pending])
        mask = tuple(active)
        if not any(mask):
            if not pending:
                break
            state = _free_with_samples(engine, state, t, seg_end, sample_times, len(record.events), samples)
            t = seg_end
            _rearm(active, rearm_at, t)
            continue
        if target is None:
            p = gen.random()
            target = (1.0 - p) * engine.norm2(state)
        if first_segment and cache is not None and t == 0.0 and not pending:
            result = cache.get(engine).seek(target, sample_times, samples)
        else:
            result = seek(
                engine, engine.stepper(mask), state, t, seg_end, target,
                sample_times, len(record.events), samples,
            )
        first_segment = False
        t, state = result.time, result.state
        if not result.clicked:
            _rearm(active, rearm_at, t)
            continue
        weights = engine.weights(state, mask)
        index, probs = select_detector(weights, gen.random())
        pre = engine.norm2(state)
        state = engine.collapse(state, index)
        record.events.append(
            ClickEvent(float(t), index, float(pre), [float(q) for q in probs], engine.summary(state))
        )
        det = engine.detectors[index]
        if det.reusable:
            if det.dead_time > 0:
                active[index] = False
                rearm_at[index] = t + det.dead_time
        else:
            active[index] = False
        target = None

    if sample_times and not record.truncated:
        seen = {x.time for x in samples}
        remaining = [s for s in sample_times if s >= t and s not in seen]
        if remaining:
            _free_with_samples(engine, state, t, remaining[-1], remaining, len(record.events), samples)
    samples.sort(key=lambda s: s.time)
    return record


def _rearm(active, rearm_at, t):
    for i, r in enumerate(rearm_at):
        if r is not None and r <= t:
            active[i] = True
            rearm_at[i] = None


def _free_with_samples(engine, state, t0, t1, sample_times, clicks, samples):
    """Undamped evolution from t0 to t1, snapshotting requested sample times in [t0, t1]."""
    t = t0
    for s in sample_times:
        if t0 <= s <= t1 and not (s == t0 and any(x.time == s for x in samples)):
            state = engine.free(state, s - t)
            t = s
            samples.append(Sample(s, clicks, state / math.sqrt(engine.norm2(state))))
    if t < t1:
        state = engine.free(state, t1 - t)
    return state
