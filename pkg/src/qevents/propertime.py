"""Proper-time formulation on the (x, t) plane.

Wave functions live on L2(dx dt) and flow in an extra parameter tau under

    dPsi/dtau = (-iH - Lambda/2) Psi - dPsi/dt,

where H and Lambda act on x only. The -d/dt generator is an exact spectral
translation in t, which commutes with the x-sector, so a product initial
state phi(t) psi0(x) stays a product: phi(t - tau) times the damped 1D
evolution of psi0.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from scipy.linalg import expm

from .detectors import DetectorSpec, rate_profile
from .grids import Grid1D, Grid2D, PotentialSpec, ScalarField2D, WaveFunction1D, gaussian_packet, gaussian_profile, periodic_profile
from .nonrel import NonrelConfig, NonrelEngine, PacketSpec, SplitStepPropagator, stability_bound
from .numerics import hamiltonian_matrix
from .pdp import CachedFlow, DarkStateError, TrajectoryRecord, run_pdp, step_times
from .rng import RngStream



@dataclass(frozen=True)
class TimeProfile:
    """Gaussian amplitude phi(t), square-normalized on the real line."""

    center: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("time profile width must be positive")

    def __call__(self, t: np.ndarray) -> np.ndarray:
        return gaussian_profile(np.asarray(t, dtype=float), self.center, self.width)

    def support(self, n_sigma: float = 8.0) -> tuple[float, float]:
        return self.center - n_sigma * self.width, self.center + n_sigma * self.width

    def to_dict(self) -> dict:
        return {"center": self.center, "width": self.width}


def time_shift(values: np.ndarray, grid_t: Grid1D, tau: float, axis: int = 1) -> np.ndarray:
    """Exact periodic translation f(t) -> f(t - tau) along ``axis``."""
    grid_t.check_spectral()
    shape = [1] * values.ndim
    shape[axis] = grid_t.n_points
    phase = np.exp(-1j * grid_t.wavenumbers * tau).reshape(shape)
    return np.fft.ifft(phase * np.fft.fft(values, axis=axis), axis=axis)


class ProperTimeStepper:
    """x-sector Strang step followed by the exact t-translation."""

    def __init__(self, grid: Grid2D, potential: np.ndarray, rate: np.ndarray, mass: float, dt: float):
        grid.check_spectral()
        self.grid = grid
        self.dt = dt
        self.x_sector = SplitStepPropagator(grid.grid_x, potential, rate, mass, dt, extra_dims=1)
        self._shift = np.exp(-1j * grid.grid_t.wavenumbers * dt)[None, :]

    def shift(self, state: np.ndarray, h: float) -> np.ndarray:
        phase = self._shift if h == self.dt else np.exp(-1j * self.grid.grid_t.wavenumbers * h)[None, :]
        return np.fft.ifft(phase * np.fft.fft(state, axis=1), axis=1)

    def step(self, state: np.ndarray, h: float) -> np.ndarray:
        return self.shift(self.x_sector.step(state, h), h)

    def free(self, state: np.ndarray, h: float) -> np.ndarray:
        return self.shift(self.x_sector.free(state, h), h)

    def norm_curve(self, state: np.ndarray):
        """Norm after a partial step; the t-translation is unitary and drops out."""
        return self.x_sector.norm_curve(state, self.grid.area_element)


def _x_inputs(grid_x: Grid1D, coupling, potential: PotentialSpec | None):
    """Potential values and Lambda(x) from detector specs or a tabulated g.

    A tabulated g may be given on the (x, t) grid, but only if it does not
    vary along t; otherwise Lambda would not commute with d/dt.
    """
    potential = potential or PotentialSpec()
    if isinstance(coupling, np.ndarray):
        g = np.asarray(coupling, dtype=float)
        if g.ndim == 2:
            if np.any(g != g[:, :1]):
                raise ValueError("coupling varies along t; only g = g(x) is supported")
            g = g[:, 0]
        if g.shape != (grid_x.n_points,) or np.any(g < 0):
            raise ValueError("coupling must be a non-negative profile on the x-grid")
        return potential.on_grid(grid_x), g**2
    return potential.on_grid(grid_x), rate_profile(coupling, grid_x, [d.active for d in coupling])


def evolve_proper_time(psi: ScalarField2D, potential: PotentialSpec | None, coupling, mass: float,
                       dtau: float) -> ScalarField2D:
    """One proper-time step: damped x-sector Strang step plus exact t-shift by dtau.

    ``coupling`` is a sequence of detectors or a tabulated g(x) array.
    """
    if not dtau > 0:
        raise ValueError(f"dtau must be positive, got {dtau}")
    v, rate = _x_inputs(psi.grid.grid_x, coupling, potential)
    stepper = ProperTimeStepper(psi.grid, v, rate, mass, dtau)
    return ScalarField2D(psi.grid, stepper.step(psi.amplitudes, dtau))


def product_state(grid: Grid2D, phi: Callable[[np.ndarray], np.ndarray], psi0: WaveFunction1D) -> ScalarField2D:
    """Psi0(x, t) = phi(t) psi0(x), with phi renormalized on the t-grid."""
    if psi0.grid != grid.grid_x:
        raise ValueError("psi0 must live on the x-axis of the 2D grid")
    ft = np.asarray(phi(grid.grid_t.points), dtype=complex)
    ft = ft / math.sqrt(np.sum(np.abs(ft) ** 2) * grid.grid_t.dx)
    return ScalarField2D(grid, np.outer(psi0.amplitudes / math.sqrt(psi0.norm2()), ft))


def damped_propagator_matrix(grid_x: Grid1D, potential: PotentialSpec | None, detectors, mass: float,
                             tau: float) -> np.ndarray:
    """Dense exp((-iH - Lambda/2) tau) on the grid-point basis."""
    v, rate = _x_inputs(grid_x, detectors, potential)
    h = hamiltonian_matrix(grid_x, PotentialSpec("tabulated", {"values": v}), mass)
    return expm(tau * (-1j * h - 0.5 * np.diag(rate)))


def factorized_solution(phi: Callable[[np.ndarray], np.ndarray], psi0: WaveFunction1D, tau: float, grid: Grid2D,
                        detectors: Sequence[DetectorSpec] = (), potential: PotentialSpec | None = None,
                        mass: float = 1.0, dense_cap: int = 256) -> ScalarField2D:
    """Closed form phi(t - tau) exp((-iH - Lambda/2) tau) psi0(x) on the grid.

    phi is evaluated directly at the shifted points (wrapped into the periodic
    box) and renormalized with the same discrete factor as :func:`product_state`.
    """
    ft0 = np.asarray(phi(grid.grid_t.points), dtype=complex)
    scale = 1.0 / math.sqrt(np.sum(np.abs(ft0) ** 2) * grid.grid_t.dx)
    lo, hi = getattr(phi, "support", lambda: (-np.inf, np.inf))()
    if lo + tau < grid.grid_t.x_min or hi + tau > grid.grid_t.x_max:
        warnings.warn("time profile support leaves the periodic t-box; the closed form wraps", RuntimeWarning)
    ft = periodic_profile(grid.grid_t, phi, shift=tau) * scale
    x0 = psi0.amplitudes / math.sqrt(psi0.norm2())
    if tau == 0:
        xs = x0
    elif psi0.grid.n_points <= dense_cap:
        xs = damped_propagator_matrix(psi0.grid, potential, detectors, mass, tau) @ x0
    else:
        v, rate = _x_inputs(psi0.grid, detectors, potential)
        n = max(1, math.ceil(tau / 1e-3))
        prop = SplitStepPropagator(psi0.grid, v, rate, mass, tau / n)
        xs = x0
        for _ in range(n):
            xs = prop.step(xs, tau / n)
    return ScalarField2D(grid, np.outer(xs, ft))


@dataclass(frozen=True)
class ProperTimeConfig:
    grid: Grid2D
    detectors: tuple[DetectorSpec, ...]
    packet: PacketSpec = field(default_factory=PacketSpec)
    time_profile: TimeProfile = field(default_factory=TimeProfile)
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    mass: float = 1.0
    horizon: float = 10.0
    dt: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "detectors", tuple(self.detectors))
        self.grid.check_spectral()
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")

    def nonrel(self) -> NonrelConfig:
        """The coordinate-time engine with the same x-sector data."""
        return NonrelConfig(self.grid.grid_x, self.detectors, self.packet, self.potential, self.mass,
                            self.horizon, self.dt)

    def initial_state(self) -> ScalarField2D:
        p = self.packet
        return product_state(self.grid, self.time_profile,
                             gaussian_packet(self.grid.grid_x, p.center, p.width, p.momentum))


class ProperTimeEngine:
    """Click process in proper time on the (x, t) plane."""

    def __init__(self, config: ProperTimeConfig):
        self.config = config
        self.grid = config.grid
        self.detectors = config.detectors
        self.horizon = config.horizon
        gx = self.grid.grid_x
        self._v, _ = _x_inputs(gx, self.detectors, config.potential)
        self._g = [d.on_grid(gx) for d in self.detectors]
        bound = stability_bound(gx, sum((g**2 for g in self._g), np.zeros(gx.n_points)), config.mass)
        if config.dt is None:
            self.dt = min(bound, config.horizon)
        elif config.dt > bound * (1 + 1e-12):
            raise ValueError(f"dt={config.dt} exceeds the stability bound {bound:.6g}")
        else:
            self.dt = config.dt
        lo, hi = config.time_profile.support()
        if lo < self.grid.grid_t.x_min or hi + config.horizon > self.grid.grid_t.x_max:
            warnings.warn(f"t-box [{self.grid.grid_t.x_min:g}, {self.grid.grid_t.x_max:g}) is too short for the "
                          "profile support plus horizon; the shift will wrap", RuntimeWarning, stacklevel=2)
        self._psi0 = config.initial_state().amplitudes
        self._steppers: dict = {}
        self._cache = CachedFlow()

    def initial_state(self) -> np.ndarray:
        return self._psi0

    def stepper(self, mask) -> ProperTimeStepper:
        if mask not in self._steppers:
            rate = np.zeros(self.grid.grid_x.n_points)
            for on, g in zip(mask, self._g):
                if on:
                    rate = rate + g**2
            self._steppers[mask] = ProperTimeStepper(self.grid, self._v, rate, self.config.mass, self.dt)
        return self._steppers[mask]

    def norm2(self, state: np.ndarray) -> float:
        return float(np.sum(np.abs(state) ** 2) * self.grid.area_element)

    scale = norm2

    def weights(self, state: np.ndarray, mask) -> np.ndarray:
        dens_x = np.sum(np.abs(state) ** 2, axis=1) * self.grid.area_element
        return np.array([float(np.sum(g**2 * dens_x)) if on else 0.0 for on, g in zip(mask, self._g)])

    def intensity(self, state: np.ndarray, mask) -> float:
        return float(np.sum(self.weights(state, mask)))

    def collapse(self, state: np.ndarray, index: int) -> np.ndarray:
        out = self._g[index][:, None] * state
        n2 = self.norm2(out)
        if not n2 > 0:
            raise DarkStateError(f"detector {index}: ||G Psi|| = 0 at a scheduled click")
        return out / math.sqrt(n2)

    def free(self, state: np.ndarray, duration: float) -> np.ndarray:
        if duration <= 0:
            return state
        return self.stepper((False,) * len(self.detectors)).free(state, duration)

    def summary(self, state: np.ndarray) -> dict:
        dens = np.abs(state) ** 2
        w = dens / dens.sum()
        x = self.grid.grid_x.points
        t = self.grid.grid_t.points
        return {"mean_x": float(np.sum(w.sum(axis=1) * x)), "mean_t": float(np.sum(w.sum(axis=0) * t))}

    def run(self, rng: RngStream, sample_times=(), max_events=None, use_cache: bool = True) -> TrajectoryRecord:
        return run_pdp(self, rng, sample_times, max_events, self._cache if use_cache else None)


def intensity_curves(config: ProperTimeConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Click intensity along the no-click damped flow from both engines, on the common step grid."""
    pt = ProperTimeEngine(config)
    nr = NonrelEngine(config.nonrel())
    if pt.dt != nr.dt:
        raise ValueError("engines disagree on the step size")
    mask = tuple(bool(d.active) for d in config.detectors)
    s2, s1 = pt.stepper(mask), nr.stepper(mask)
    a, b = pt.initial_state(), nr.initial_state()
    times = step_times(0.0, config.horizon, pt.dt)
    i2, i1 = [pt.intensity(a, mask)], [float(np.sum(nr.weights(b, mask)))]
    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        a, b = s2.step(a, h), s1.step(b, h)
        i2.append(pt.intensity(a, mask))
        i1.append(float(np.sum(nr.weights(b, mask))))
    return np.array(times), np.array(i1), np.array(i2)


def _first_clicks(engine, n: int, seed: int, threads: int) -> tuple[np.ndarray, np.ndarray]:
    """First click time (inf if none) and detector index (-1 if none) per trajectory."""
    def one(i):
        rec = engine.run(RngStream(seed, i), max_events=1)
        return (rec.events[0].time, rec.events[0].detector) if rec.events else (np.inf, -1)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        res = list(pool.map(one, range(n)))
    return np.array([r[0] for r in res], dtype=float), np.array([r[1] for r in res], dtype=int)


def ks_two_sample_critical(n: int, m: int, alpha: float) -> float:
    return float(stats.kstwobign.isf(alpha) * math.sqrt((n + m) / (n * m)))


def click_statistics_equivalence(config: ProperTimeConfig, n_samples: int, seed_proper: int, seed_coordinate: int,
                                 threads: int = 1, alpha: float = 0.05, clicks_out: dict | None = None) -> dict:
    """Compare first-click laws of the proper-time and coordinate-time engines.

    The two ensembles use independent seeds. Trajectories without a click
    before the horizon enter the KS test as +inf. ``clicks_out`` receives the
    raw first-click times and detector indices of both ensembles.
    """
    times, i1, i2 = intensity_curves(config)
    a, da = _first_clicks(ProperTimeEngine(config), n_samples, seed_proper, threads)
    b, db = _first_clicks(NonrelEngine(config.nonrel()), n_samples, seed_coordinate, threads)
    if clicks_out is not None:
        clicks_out.update(proper=(a, da), coordinate=(b, db))
    report = {
        "n_samples": n_samples,
        "seeds": [seed_proper, seed_coordinate],
        "max_intensity_deviation": float(np.max(np.abs(i1 - i2))),
        "no_click_fraction_proper": float(np.mean(~np.isfinite(a))),
        "no_click_fraction_coordinate": float(np.mean(~np.isfinite(b))),
        "ks_statistic": None,
        "ks_critical": None,
    }
    if n_samples:
        report["ks_statistic"] = float(stats.ks_2samp(a, b).statistic)
        report["ks_critical"] = ks_two_sample_critical(a.size, b.size, alpha)
    return report
