"""Detector clicks for a spin-1/2 particle in proper time.

The state is a four-spinor on the (x, t) plane paired by the indefinite
product <Phi, Psi> = sum Phi^dagger gamma^0 Psi dx dt. It flows under

    dPsi/dtau = (-i D^2 / 2M - Lambda / 2) Psi,   Lambda = sum_i G_i^2,

with D the Dirac operator and G_i = P+ g_i(x), P+ = (1 + gamma^0) / 2.
Because gamma^0 P+ = P+, every rate <Psi, G_i^2 Psi> is a Euclidean norm
of the upper spinor components and hence non-negative, even though the
metric itself is indefinite.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .detectors import DetectorSpec
from .grids import Grid2D, SpinorField2D
from .numerics import (
    GAMMA,
    GAMMA0_DIAG,
    apply_dirac,
    dirac_symbol,
    indefinite_norm2,
    spectral_wavenumbers_2d,
)
from .pdp import CachedFlow, DarkStateError, TrajectoryRecord, run_pdp, seek, select_detector
from .rng import RngStream

log = logging.getLogger(__name__)

RelDetectorSpec = DetectorSpec

WEIGHTINGS = ("lambda", "literal")
MAX_RATE_PHASE = 0.01
MAX_PHASE = np.pi / 4
# Largest tolerated amplification exp(rate * horizon) of spacelike modes before warning.
GROWTH_WARN = 1e8


@dataclass(frozen=True)
class SpinorPacket:
    """Gaussian envelope in x and t with carrier exp(i(p x - E t)) times a fixed spinor.

    ``spinor`` is ``"upper"`` for (1, 0, 0, 0), ``"on-shell"`` for the
    positive-energy solution u(p) with E = sqrt(p^2 + m^2), or an explicit
    length-4 list.
    """

    x_center: float = 0.0
    x_width: float = 1.0
    t_center: float = 0.0
    t_width: float = 1.0
    momentum: float = 0.0
    energy: float | None = None
    spinor: str | tuple = "upper"

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("x_center", "x_width", "t_center", "t_width", "momentum", "energy")}
        d["spinor"] = self.spinor if isinstance(self.spinor, str) else [complex(c).real for c in self.spinor]
        return d


def on_shell_spinor(energy: float, momentum: float, mass: float) -> np.ndarray:
    """Unit vector u with (gamma^0 E - gamma^1 p - m) u = 0, from the null space of the 4x4 system."""
    a = GAMMA[0] * energy - GAMMA[1] * momentum - mass * np.eye(4)
    _, sv, vh = np.linalg.svd(a)
    if sv[-1] > 1e-9 * max(1.0, sv[0]):
        raise ValueError(f"(E, p, m) = ({energy}, {momentum}, {mass}) is not on shell")
    u = vh[-1].conj()
    # prefer the representative with the largest upper component
    return u * np.exp(-1j * np.angle(u[np.argmax(np.abs(u))]))


@dataclass(frozen=True)
class RelConfig:
    grid: Grid2D
    detectors: tuple[DetectorSpec, ...]
    dirac_mass: float = 1.0
    evolution_mass: float | None = None
    charge: float = 0.0
    vector_potential: tuple | None = None
    packet: SpinorPacket = field(default_factory=SpinorPacket)
    horizon: float = 5.0
    dt: float | None = None
    weighting: str = "lambda"

    def __post_init__(self):
        object.__setattr__(self, "detectors", tuple(self.detectors))
        self.grid.check_spectral()
        if self.evolution_mass is None:
            if not self.dirac_mass > 0:
                raise ValueError("evolution_mass must be given when dirac_mass is not positive")
            object.__setattr__(self, "evolution_mass", float(self.dirac_mass))
        if not self.evolution_mass > 0:
            raise ValueError(f"evolution mass M must be positive, got {self.evolution_mass}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def has_field(self) -> bool:
        return self.vector_potential is not None and self.charge != 0.0

    def initial_state(self) -> SpinorField2D:
        p = self.packet
        gx, gt = self.grid.grid_x, self.grid.grid_t
        x, t = gx.points[:, None], gt.points[None, :]
        energy = p.energy
        if p.spinor == "on-shell":
            if energy is None:
                energy = math.hypot(p.momentum, self.dirac_mass)
            u = on_shell_spinor(energy, p.momentum, self.dirac_mass)
        elif p.spinor == "upper":
            u = np.array([1, 0, 0, 0], dtype=complex)
        else:
            u = np.asarray(p.spinor, dtype=complex)
            if u.shape != (4,):
                raise ValueError("explicit spinor must have four components")
        energy = 0.0 if energy is None else energy
        env = np.exp(-((x - p.x_center) ** 2) / (4 * p.x_width**2) - ((t - p.t_center) ** 2) / (4 * p.t_width**2))
        amps = (env * np.exp(1j * (p.momentum * x - energy * t)))[..., None] * u
        n2 = indefinite_norm2(amps, self.grid.area_element)
        if not n2 > 1e-12 * np.sum(np.abs(amps) ** 2) * self.grid.area_element:
            raise ValueError(f"initial spinor has non-positive indefinite norm {n2:.3g}; rejected")
        return SpinorField2D(self.grid, amps / math.sqrt(n2))


# ------------------------------------------------------------------ operators

def apply_coupling(psi: SpinorField2D, detector: DetectorSpec, power: int = 1) -> SpinorField2D:
    """(G^power Psi)(x, t) = P+ g(x)^power Psi(x, t)."""
    g = detector.on_grid(psi.grid.grid_x) ** power
    out = np.zeros_like(psi.amplitudes)
    out[..., :2] = g[:, None, None] * psi.amplitudes[..., :2]
    return SpinorField2D(psi.grid, out)


def coupling_expectation(psi: SpinorField2D, detector: DetectorSpec, power: int = 2) -> float:
    """<Psi, G^power Psi> through the Euclidean form sum g^power |P+ Psi|^2 dx dt."""
    return _upper_weight(psi.amplitudes, detector.on_grid(psi.grid.grid_x) ** power, psi.grid.area_element)


def _upper_weight(amps: np.ndarray, profile: np.ndarray, area: float) -> float:
    upper = np.abs(amps[..., 0]) ** 2 + np.abs(amps[..., 1]) ** 2
    return float(np.sum(profile[:, None] * upper) * area)


def _gamma0(v):
    return v * GAMMA0_DIAG


def _gamma1(v):
    # gamma^1 = [[0, sigma_x], [-sigma_x, 0]]
    return np.stack([v[..., 3], v[..., 2], -v[..., 1], -v[..., 0]], axis=-1)


class DiracSquared:
    """Spectral data for D^2 / 2M at A = 0 on a periodic (x, t) grid.

    For the mode exp(i(k x + omega t)) the symbol of D is -(N + m) with
    N = gamma^0 omega + gamma^1 k and N^2 = (omega^2 - k^2) I, so
    exp(-i h D^2 / 2M) = exp(-i h (s + m^2) / 2M) [cos(a r) - i sin(a r)/r N]
    with s = omega^2 - k^2, r = sqrt(s) and a = h m / M.
    """

    def __init__(self, grid: Grid2D, mass: float, evolution_mass: float):
        grid.check_spectral()
        self.grid = grid
        self.mass = mass
        self.big_mass = evolution_mass
        kx, om = spectral_wavenumbers_2d(grid)
        self.k = np.broadcast_to(kx, grid.shape)
        self.omega = np.broadcast_to(om, grid.shape)
        self.s = self.omega**2 - self.k**2
        self.r = np.sqrt(self.s.astype(complex))

    def _n(self, v):
        return self.omega[..., None] * _gamma0(v) + self.k[..., None] * _gamma1(v)

    def apply_symbol(self, vhat: np.ndarray) -> np.ndarray:
        """D^2 / 2M in Fourier space."""
        m = self.mass
        return ((self.s + m * m)[..., None] * vhat + 2 * m * self._n(vhat)) / (2 * self.big_mass)

    def apply(self, amps: np.ndarray) -> np.ndarray:
        vhat = np.fft.fft2(amps, axes=(0, 1))
        return np.fft.ifft2(self.apply_symbol(vhat), axes=(0, 1))

    def factors(self, h: float):
        m, big = self.mass, self.big_mass
        a = h * m / big
        phase = np.exp(-1j * h * (self.s + m * m) / (2 * big))
        c = np.cos(a * self.r)
        # sin(a r) / r, analytic in s; np.sinc(x) = sin(pi x) / (pi x)
        sr = a * np.sinc(a * self.r / np.pi)
        return phase[..., None], c[..., None], sr[..., None]

    def propagate_hat(self, vhat: np.ndarray, factors) -> np.ndarray:
        phase, c, sr = factors
        return phase * (c * vhat - 1j * sr * self._n(vhat))

    def propagate(self, amps: np.ndarray, h: float) -> np.ndarray:
        vhat = np.fft.fft2(amps, axes=(0, 1))
        return np.fft.ifft2(self.propagate_hat(vhat, self.factors(h)), axes=(0, 1))

    def mode_matrices(self, h: float | None = None) -> np.ndarray:
        """Per-mode 4x4 matrices: the symbol D^2/2M, or its propagator over h."""
        sym = dirac_symbol(self.omega, self.k, self.mass)
        sym2 = sym @ sym / (2 * self.big_mass)
        if h is None:
            return sym2
        phase, c, sr = self.factors(h)
        n = self.omega[..., None, None] * GAMMA[0] + self.k[..., None, None] * GAMMA[1]
        return phase[..., None] * (c[..., None] * np.eye(4) - 1j * sr[..., None] * n)

    def max_rate(self) -> float:
        """Bound on |eigenvalue| of D^2 / 2M over the grid."""
        m, big = self.mass, self.big_mass
        return float(np.max((np.abs(self.s) + m * m) / (2 * big) + m * np.sqrt(np.abs(self.s)) / big))

    def max_growth(self) -> float:
        """Largest exponential growth rate (spacelike modes, |k| > |omega|)."""
        return float(np.max(self.mass * np.sqrt(np.maximum(-self.s, 0.0)) / self.big_mass))


def apply_dirac_squared(psi: SpinorField2D, cfg: RelConfig, method: str = "auto") -> SpinorField2D:
    """D(D Psi) / 2M; ``spectral`` uses the per-mode symbol, ``double`` applies D twice."""
    if method == "auto":
        method = "double" if cfg.has_field else "spectral"
    if method == "spectral":
        if cfg.has_field:
            raise ValueError("the spectral fast path requires A = 0")
        return SpinorField2D(psi.grid, DiracSquared(psi.grid, cfg.dirac_mass, cfg.evolution_mass).apply(psi.amplitudes))
    if method != "double":
        raise ValueError(f"unknown method {method!r}")
    once = apply_dirac(psi, cfg.dirac_mass, cfg.charge, cfg.vector_potential)
    twice = apply_dirac(once, cfg.dirac_mass, cfg.charge, cfg.vector_potential)
    return SpinorField2D(psi.grid, twice.amplitudes / (2 * cfg.evolution_mass))


def _taylor_propagate(apply, amps: np.ndarray, h: float, norm_bound: float, order: int = 18) -> np.ndarray:
    """exp(-i h L) amps by substepped truncated Taylor series; used when A != 0."""
    n_sub = max(1, math.ceil(abs(h) * norm_bound / 0.5))
    dh = h / n_sub
    for _ in range(n_sub):
        term = amps
        total = amps
        for j in range(1, order + 1):
            term = (-1j * dh / j) * apply(term)
            total = total + term
        amps = total
    return amps


class RelStepper:
    """Strang step: half D^2/2M propagator, pointwise exp(-Lambda h / 2), half propagator."""

    def __init__(self, cfg: RelConfig, rate: np.ndarray, dt: float, d2: DiracSquared):
        self.cfg = cfg
        self.dt = dt
        self.d2 = d2
        self.rate = np.asarray(rate, dtype=float)
        self._half = d2.factors(dt / 2)
        self._damp = np.exp(-0.5 * self.rate * dt)[:, None]
        if cfg.has_field:
            a0, a1 = (np.max(np.abs(a)) for a in cfg.vector_potential)
            kx, om = spectral_wavenumbers_2d(cfg.grid)
            d_norm = np.max(np.abs(om)) + np.max(np.abs(kx)) + abs(cfg.dirac_mass) + abs(cfg.charge) * (a0 + a1)
            self._bound = d_norm**2 / (2 * cfg.evolution_mass)

    def _kinetic(self, amps: np.ndarray, h: float, factors=None) -> np.ndarray:
        if self.cfg.has_field:
            grid = self.cfg.grid

            def apply(v):
                return apply_dirac_squared(SpinorField2D(grid, v), self.cfg, "double").amplitudes

            return _taylor_propagate(apply, amps, h, self._bound)
        vhat = np.fft.fft2(amps, axes=(0, 1))
        factors = factors if factors is not None else self.d2.factors(h)
        return np.fft.ifft2(self.d2.propagate_hat(vhat, factors), axes=(0, 1))

    def damp(self, amps: np.ndarray, h: float) -> np.ndarray:
        d = self._damp if h == self.dt else np.exp(-0.5 * self.rate * h)[:, None]
        out = amps.copy()
        out[..., :2] *= d[..., None]
        return out

    def step(self, state: np.ndarray, h: float) -> np.ndarray:
        half = self._half if h == self.dt else None
        out = self._kinetic(state, h / 2, half)
        out = self.damp(out, h)
        return self._kinetic(out, h / 2, half)

    def free(self, state: np.ndarray, h: float) -> np.ndarray:
        return self._kinetic(state, h)

    def norm_curve(self, state: np.ndarray):
        """s -> <Psi_s, Psi_s> after a partial step of length s.

        The trailing half propagator preserves the indefinite product, so it
        is skipped; the transform of ``state`` is computed once.
        """
        area = self.cfg.grid.area_element
        if self.cfg.has_field:
            return lambda s: indefinite_norm2(self.damp(self._kinetic(state, s / 2), s), area)
        vhat = np.fft.fft2(state, axes=(0, 1))
        nvhat = self.d2._n(vhat)
        rate = self.rate[:, None]

        def curve(s):
            phase, c, sr = self.d2.factors(s / 2)
            phi = np.fft.ifft2(phase * (c * vhat - 1j * sr * nvhat), axes=(0, 1))
            w = np.abs(phi) ** 2
            upper = (w[..., 0] + w[..., 1]) * np.exp(-rate * s)
            return float((upper.sum() - w[..., 2].sum() - w[..., 3].sum()) * area)

        return curve


class RelEngine:
    """Click process for :class:`RelConfig` (indefinite metric, proper time)."""

    def __init__(self, cfg: RelConfig):
        self.config = cfg
        self.grid = cfg.grid
        self.detectors = cfg.detectors
        self.horizon = cfg.horizon
        self.d2 = DiracSquared(cfg.grid, cfg.dirac_mass, cfg.evolution_mass)
        gx = cfg.grid.grid_x
        self._g = [d.on_grid(gx) for d in self.detectors]
        total = sum((g**2 for g in self._g), np.zeros(gx.n_points))
        bounds = [MAX_PHASE / self.d2.max_rate(), cfg.horizon]
        if np.max(total) > 0:
            bounds.append(MAX_RATE_PHASE / float(np.max(total)))
        bound = min(bounds)
        if cfg.dt is None:
            self.dt = bound
        elif cfg.dt > bound * (1 + 1e-12):
            raise ValueError(f"dtau={cfg.dt} exceeds the stability bound {bound:.6g}")
        else:
            self.dt = cfg.dt
        growth = self.d2.max_growth() * cfg.horizon
        if growth > math.log(GROWTH_WARN):
            log.warning("spacelike modes can grow by exp(%.1f) over the horizon; roundoff may be amplified", growth)
        self._psi0 = cfg.initial_state().amplitudes
        self._steppers: dict = {}
        self._cache = CachedFlow()

    def initial_state(self) -> np.ndarray:
        return self._psi0

    def stepper(self, mask) -> RelStepper:
        if mask not in self._steppers:
            rate = np.zeros(self.grid.grid_x.n_points)
            for on, g in zip(mask, self._g):
                if on:
                    rate = rate + g**2
            self._steppers[mask] = RelStepper(self.config, rate, self.dt, self.d2)
        return self._steppers[mask]

    def norm2(self, state: np.ndarray) -> float:
        return indefinite_norm2(state, self.grid.area_element)

    def scale(self, state: np.ndarray) -> float:
        return float(np.sum(np.abs(state) ** 2) * self.grid.area_element)

    def weights(self, state: np.ndarray, mask) -> np.ndarray:
        power = 2 if self.config.weighting == "lambda" else 1
        area = self.grid.area_element
        return np.array([_upper_weight(state, g**power, area) if on else 0.0 for on, g in zip(mask, self._g)])

    def intensity(self, state: np.ndarray, mask) -> float:
        area = self.grid.area_element
        return float(sum(_upper_weight(state, g**2, area) for on, g in zip(mask, self._g) if on))

    def collapse(self, state: np.ndarray, index: int) -> np.ndarray:
        g = self._g[index]
        w = _upper_weight(state, g**2, self.grid.area_element)
        if not w > 0:
            raise DarkStateError(f"detector {index}: <Psi, G^2 Psi> = 0 at a scheduled click")
        out = np.zeros_like(state)
        out[..., :2] = g[:, None, None] * state[..., :2] / math.sqrt(w)
        return out

    def free(self, state: np.ndarray, duration: float) -> np.ndarray:
        if duration <= 0:
            return state
        return self.stepper((False,) * len(self.detectors)).free(state, duration)

    def summary(self, state: np.ndarray) -> dict:
        upper = np.abs(state[..., 0]) ** 2 + np.abs(state[..., 1]) ** 2
        lower = np.abs(state[..., 2]) ** 2 + np.abs(state[..., 3]) ** 2
        w = upper / upper.sum()
        return {
            "mean_x": float(np.sum(w.sum(axis=1) * self.grid.grid_x.points)),
            "mean_t": float(np.sum(w.sum(axis=0) * self.grid.grid_t.points)),
            "upper_norm2": float(upper.sum() * self.grid.area_element),
            "lower_norm2": float(lower.sum() * self.grid.area_element),
        }

    def run(self, rng: RngStream, sample_times=(), max_events=None, use_cache: bool = True) -> TrajectoryRecord:
        return run_pdp(self, rng, sample_times, max_events, self._cache if use_cache else None)


def evolve_rel_damped(psi: SpinorField2D, cfg: RelConfig, dtau: float) -> SpinorField2D:
    """One Strang step of the damped proper-time flow with the config's active detectors."""
    if not dtau > 0:
        raise ValueError(f"dtau must be positive, got {dtau}")
    gx = cfg.grid.grid_x
    rate = sum((d.on_grid(gx) ** 2 for d in cfg.detectors if d.active), np.zeros(gx.n_points))
    stepper = RelStepper(cfg, rate, dtau, DiracSquared(cfg.grid, cfg.dirac_mass, cfg.evolution_mass))
    out = stepper.step(psi.amplitudes, dtau)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("relativistic damped step produced non-finite amplitudes")
    return SpinorField2D(psi.grid, out)


def rel_find_jump_time(psi0: SpinorField2D, cfg: RelConfig, p: float) -> tuple[float | None, SpinorField2D]:
    """First tau with 1 - <Psi_tau, Psi_tau> = p, or None when the horizon comes first."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    engine = RelEngine(cfg)
    mask = tuple(bool(d.active) for d in cfg.detectors)
    state = psi0.amplitudes
    n0 = engine.norm2(state)
    if not any(mask):
        return None, SpinorField2D(psi0.grid, engine.free(state, cfg.horizon))
    res = seek(engine, engine.stepper(mask), state, 0.0, cfg.horizon, (1.0 - p) * n0)
    return (res.time if res.clicked else None), SpinorField2D(psi0.grid, res.state)


def rel_jump(psi: SpinorField2D, detector: DetectorSpec) -> SpinorField2D:
    """Psi -> G Psi / sqrt(<Psi, G^2 Psi>), a unit-norm state in the P+ subspace."""
    w = coupling_expectation(psi, detector, 2)
    if not w > 0:
        raise DarkStateError("<Psi, G^2 Psi> = 0: the detector cannot click on this state")
    g = apply_coupling(psi, detector)
    return SpinorField2D(psi.grid, g.amplitudes / math.sqrt(w))


def selection_weights(psi: SpinorField2D, detectors: Sequence[DetectorSpec], weighting: str = "lambda") -> np.ndarray:
    power = 2 if weighting == "lambda" else 1
    return np.array([coupling_expectation(psi, d, power) if d.active else 0.0 for d in detectors])


def rel_select_detector(psi: SpinorField2D, detectors: Sequence[DetectorSpec], u: float,
                        weighting: str = "lambda") -> tuple[int, np.ndarray]:
    """Choose the firing detector from the uniform draw ``u``; returns (index, probabilities)."""
    if not any(d.active for d in detectors):
        raise ValueError("no active detector")
    return select_detector(selection_weights(psi, detectors, weighting), u)


def run_rel_trajectory(cfg: RelConfig, rng: RngStream, sample_times=(), max_events=None) -> TrajectoryRecord:
    return RelEngine(cfg).run(rng, sample_times, max_events, use_cache=False)
