"""Counter clicks for a particle on a line: damped Schrödinger flow, random
threshold click times, collapse g psi / ||g psi|| and post-click evolution."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .detectors import DetectorSpec, rate_profile
from .grids import Grid1D, PotentialSpec, WaveFunction1D, gaussian_packet
from .pdp import CachedFlow, DarkStateError, TrajectoryRecord, run_pdp, seek
from .rng import RngStream

# Accuracy bounds on the default time step.
MAX_RATE_PHASE = 0.01
MAX_KINETIC_PHASE = np.pi / 4


class SplitStepPropagator:
    """Strang step for d psi/dt = (-iH - Lambda/2) psi along one axis of an array.

    Half kinetic step in Fourier space, full pointwise exp((-iV - Lambda/2) h),
    half kinetic step. ``mass=np.inf`` drops the kinetic part entirely. Extra
    trailing axes (e.g. coordinate time) are carried along untouched.
    """

    def __init__(self, grid: Grid1D, potential: np.ndarray, rate: np.ndarray, mass: float,
                 dt: float, extra_dims: int = 0):
        grid.check_spectral()
        if not mass > 0:
            raise ValueError(f"mass must be positive, got {mass}")
        self.grid = grid
        self.mass = mass
        self.kinetic = bool(np.isfinite(mass))
        shape = (grid.n_points,) + (1,) * extra_dims
        self._energy = (grid.wavenumbers**2 / (2.0 * mass) if self.kinetic else np.zeros(grid.n_points)).reshape(shape)
        self._pointwise = (1j * np.asarray(potential, float) + 0.5 * np.asarray(rate, float)).reshape(shape)
        self.dt = dt
        self._half_kin, self._point = self._factors(dt)

    def _factors(self, h: float):
        return np.exp(-0.5j * self._energy * h), np.exp(-self._pointwise * h)

    def step(self, state: np.ndarray, h: float) -> np.ndarray:
        half_kin, point = (self._half_kin, self._point) if h == self.dt else self._factors(h)
        if not self.kinetic:
            return point * state
        out = np.fft.ifft(half_kin * np.fft.fft(state, axis=0), axis=0)
        out = point * out
        return np.fft.ifft(half_kin * np.fft.fft(out, axis=0), axis=0)

    def norm_curve(self, state: np.ndarray, measure: float | None = None):
        """s -> squared norm after a step of length s from ``state``.

        The trailing half kinetic step is unitary, so only the first half step
        and the pointwise factor matter; the transform of ``state`` is reused.
        """
        measure = self.grid.dx if measure is None else measure
        rate = 2.0 * self._pointwise.real
        if not self.kinetic:
            dens = np.abs(state) ** 2
            return lambda s: float(np.sum(np.exp(-rate * s) * dens) * measure)
        vhat = np.fft.fft(state, axis=0)

        def curve(s):
            half = vhat if s == 0 else np.exp(-0.5j * self._energy * s) * vhat
            return float(np.sum(np.exp(-rate * s) * np.abs(np.fft.ifft(half, axis=0)) ** 2) * measure)

        return curve

    @property
    def is_free(self) -> bool:
        """No potential, no damping: the kinetic propagator is exact for any h."""
        return not np.any(self._pointwise)

    def free(self, state: np.ndarray, h: float) -> np.ndarray:
        if self.is_free:
            if not self.kinetic:
                return state
            return np.fft.ifft(np.exp(-1j * self._energy * h) * np.fft.fft(state, axis=0), axis=0)
        n = max(1, math.ceil(h / self.dt - 1e-9))
        for _ in range(n):
            state = self.step(state, h / n)
        return state


def stability_bound(grid: Grid1D, rate: np.ndarray, mass: float) -> float:
    """Largest step with max(Lambda) dt <= 0.01 and Nyquist kinetic phase <= pi/4."""
    bounds = [np.inf]
    rmax = float(np.max(rate)) if np.size(rate) else 0.0
    if rmax > 0:
        bounds.append(MAX_RATE_PHASE / rmax)
    if np.isfinite(mass):
        bounds.append(MAX_KINETIC_PHASE / (grid.nyquist**2 / (2.0 * mass)))
    return min(bounds)


def evolve_damped(psi: WaveFunction1D, detectors: Sequence[DetectorSpec], potential: PotentialSpec | None,
                  mass: float, dt: float) -> WaveFunction1D:
    """One Strang step of the damped flow with Lambda built from the active detectors."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    potential = potential or PotentialSpec()
    rate = rate_profile(detectors, psi.grid, [d.active for d in detectors])
    prop = SplitStepPropagator(psi.grid, potential.on_grid(psi.grid), rate, mass, dt)
    out = prop.step(psi.amplitudes, dt)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("damped step produced non-finite amplitudes")
    return WaveFunction1D(psi.grid, out)


def jump(psi: WaveFunction1D, detector: DetectorSpec) -> tuple[WaveFunction1D, DetectorSpec]:
    """Collapse psi -> g psi / ||g psi|| and flip the counter to alpha = 1."""
    g = detector.on_grid(psi.grid)
    out = g * psi.amplitudes
    norm2 = float(np.sum(np.abs(out) ** 2) * psi.grid.dx)
    if not norm2 > 0:
        raise DarkStateError("||g psi|| = 0: the detector cannot click on this state")
    return WaveFunction1D(psi.grid, out / math.sqrt(norm2)), detector.clicked()


@dataclass(frozen=True)
class HybridState1D:
    psi: WaveFunction1D
    detectors: tuple[DetectorSpec, ...]
    t: float = 0.0

    def __post_init__(self):
        if not self.detectors:
            raise ValueError("a hybrid state needs at least one detector")


@dataclass(frozen=True)
class PacketSpec:
    center: float = 0.0
    width: float = 1.0
    momentum: float = 0.0

    def to_dict(self) -> dict:
        return {"center": self.center, "width": self.width, "momentum": self.momentum}


@dataclass(frozen=True)
class NonrelConfig:
    grid: Grid1D
    detectors: tuple[DetectorSpec, ...]
    packet: PacketSpec = field(default_factory=PacketSpec)
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    mass: float = 1.0
    horizon: float = 10.0
    dt: float | None = None
    initial: WaveFunction1D | None = None

    def __post_init__(self):
        object.__setattr__(self, "detectors", tuple(self.detectors))
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.packet.width <= 0:
            raise ValueError("packet width must be positive")
        self.grid.check_spectral()

    def initial_state(self) -> WaveFunction1D:
        if self.initial is not None:
            return self.initial.normalized()
        p = self.packet
        return gaussian_packet(self.grid, p.center, p.width, p.momentum)


class NonrelEngine:
    """Click-process engine for :class:`NonrelConfig`; see :func:`qevents.pdp.run_pdp`."""

    def __init__(self, config: NonrelConfig):
        self.config = config
        self.grid = config.grid
        self.detectors = config.detectors
        self.horizon = config.horizon
        self._g = [d.on_grid(self.grid) for d in self.detectors]
        self._v = config.potential.on_grid(self.grid)
        bound = stability_bound(self.grid, sum((g**2 for g in self._g), np.zeros(self.grid.n_points)), config.mass)
        if config.dt is None:
            self.dt = min(bound, config.horizon)
        elif config.dt > bound * (1 + 1e-12):
            raise ValueError(f"dt={config.dt} exceeds the stability bound {bound:.6g}")
        else:
            self.dt = config.dt
        self._psi0 = config.initial_state().amplitudes
        self._steppers: dict[tuple[bool, ...], SplitStepPropagator] = {}
        self._cache = CachedFlow()

    def initial_state(self) -> np.ndarray:
        return self._psi0

    def stepper(self, mask: tuple[bool, ...]) -> SplitStepPropagator:
        if mask not in self._steppers:
            rate = np.zeros(self.grid.n_points)
            for on, g in zip(mask, self._g):
                if on:
                    rate = rate + g**2
            self._steppers[mask] = SplitStepPropagator(self.grid, self._v, rate, self.config.mass, self.dt)
        return self._steppers[mask]

    def norm2(self, state: np.ndarray) -> float:
        return float(np.sum(np.abs(state) ** 2) * self.grid.dx)

    scale = norm2

    def weights(self, state: np.ndarray, mask: tuple[bool, ...]) -> np.ndarray:
        dens = np.abs(state) ** 2
        return np.array([float(np.sum(g**2 * dens) * self.grid.dx) if on else 0.0
                         for on, g in zip(mask, self._g)])

    def collapse(self, state: np.ndarray, index: int) -> np.ndarray:
        out = self._g[index] * state
        n2 = self.norm2(out)
        if not n2 > 0:
            raise DarkStateError(f"detector {index}: ||g psi|| = 0 at a scheduled click")
        return out / math.sqrt(n2)

    def free(self, state: np.ndarray, duration: float) -> np.ndarray:
        if duration <= 0:
            return state
        return self.stepper((False,) * len(self.detectors)).free(state, duration)

    def summary(self, state: np.ndarray) -> dict:
        dens = np.abs(state) ** 2
        w = dens / dens.sum()
        x = self.grid.points
        mean = float(np.sum(w * x))
        return {"mean_x": mean, "std_x": float(np.sqrt(max(np.sum(w * (x - mean) ** 2), 0.0)))}

    def run(self, rng: RngStream, sample_times: Sequence[float] = (), max_events: int | None = None,
            use_cache: bool = True) -> TrajectoryRecord:
        return run_pdp(self, rng, sample_times, max_events, self._cache if use_cache else None)


def find_jump_time(state: HybridState1D, p: float, horizon: float, potential: PotentialSpec | None = None,
                   mass: float = 1.0, dt: float | None = None) -> tuple[float | None, WaveFunction1D]:
    """First t1 >= state.t with 1 - ||psi_t1||^2 = p under the damped flow.

    Returns ``(None, psi_at_horizon)`` when the threshold is not reached.
    The returned wave function is unnormalized.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    cfg = NonrelConfig(state.psi.grid, state.detectors, potential=potential or PotentialSpec(), mass=mass,
                       horizon=horizon, dt=dt, initial=state.psi)
    engine = NonrelEngine(cfg)
    psi0 = state.psi.amplitudes
    mask = tuple(bool(d.active) for d in state.detectors)
    n0 = engine.norm2(psi0)
    res = seek(engine, engine.stepper(mask), psi0, state.t, horizon, (1.0 - p) * n0)
    return (res.time if res.clicked else None), WaveFunction1D(state.psi.grid, res.state)


def run_trajectory(config: NonrelConfig, rng: RngStream, sample_times: Sequence[float] = (),
                   max_events: int | None = None) -> TrajectoryRecord:
    return NonrelEngine(config).run(rng, sample_times, max_events, use_cache=False)


def with_detectors(config: NonrelConfig, detectors: Sequence[DetectorSpec]) -> NonrelConfig:
    return replace(config, detectors=tuple(detectors))
