"""Uniform periodic grids and the field containers that live on them.

All axes are periodic: a grid with ``n_points`` samples covers
``[x_min, x_max)`` and the point ``x_max`` is identified with ``x_min``.
Units are dimensionless with hbar = 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid1D:
    n_points: int
    x_min: float
    x_max: float

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValueError(f"n_points must be an integer >= 2, got {self.n_points}")
        if not self.x_max > self.x_min:
            raise ValueError(f"x_max ({self.x_max}) must exceed x_min ({self.x_min})")

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n_points

    @property
    def points(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points)

    @property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers in numpy FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)

    @property
    def nyquist(self) -> float:
        return np.pi / self.dx

    def check_spectral(self) -> None:
        if not _is_power_of_two(self.n_points):
            raise ValueError(
                f"spectral backend requires a power-of-two grid, got n_points={self.n_points}"
            )

    def to_dict(self) -> dict:
        return {"n_points": self.n_points, "x_min": self.x_min, "x_max": self.x_max}


@dataclass(frozen=True)
class Grid2D:
    """Product grid over (x, t); coordinate time is just a second periodic axis."""

    grid_x: Grid1D
    grid_t: Grid1D

    @property
    def shape(self) -> tuple[int, int]:
        return (self.grid_x.n_points, self.grid_t.n_points)

    @property
    def area_element(self) -> float:
        return self.grid_x.dx * self.grid_t.dx

    @property
    def volume(self) -> float:
        return self.grid_x.length * self.grid_t.length

    def check_spectral(self) -> None:
        self.grid_x.check_spectral()
        self.grid_t.check_spectral()


def _same_grid(a, b) -> None:
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


@dataclass(frozen=True, eq=False)
class WaveFunction1D:
    grid: Grid1D
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.grid.n_points,):
            raise ValueError(
                f"amplitudes shape {amps.shape} does not match grid ({self.grid.n_points},)"
            )
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def norm2(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.dx)

    def normalized(self) -> "WaveFunction1D":
        return WaveFunction1D(self.grid, self.amplitudes / np.sqrt(self.norm2()))

    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True, eq=False)
class ScalarField2D:
    grid: Grid2D
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != self.grid.shape:
            raise ValueError(f"amplitudes shape {amps.shape} does not match grid {self.grid.shape}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def norm2(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.area_element)


@dataclass(frozen=True, eq=False)
class SpinorField2D:
    """Four-component spinor on an (x, t) grid, amplitudes shaped (n_x, n_t, 4)."""

    grid: Grid2D
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (*self.grid.shape, 4):
            raise ValueError(
                f"amplitudes shape {amps.shape} does not match grid {(*self.grid.shape, 4)}"
            )
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def euclidean_norm2(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.area_element)


@dataclass(frozen=True)
class PotentialSpec:
    """Real static potential V(x).

    kind is one of ``zero``, ``harmonic`` (params: omega, center), ``barrier``
    (params: height, a, b) or ``tabulated`` (params: values on the grid).
    """

    kind: str = "zero"
    params: dict = field(default_factory=dict)

    KINDS = ("zero", "harmonic", "barrier", "tabulated")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}; expected one of {self.KINDS}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "harmonic":
            omega = float(p.get("omega", 1.0))
            mass = float(p.get("mass", 1.0))
            c = float(p.get("center", 0.0))
            return 0.5 * mass * omega**2 * (x - c) ** 2
        if self.kind == "barrier":
            h = float(p["height"])
            return np.where((x >= p["a"]) & (x < p["b"]), h, 0.0)
        values = np.asarray(p["values"], dtype=float)
        if values.shape != x.shape:
            raise ValueError(f"tabulated potential has {values.size} values for {x.size} points")
        return values.copy()

    def on_grid(self, grid: Grid1D) -> np.ndarray:
        v = self(grid.points)
        if np.iscomplexobj(v) or not np.all(np.isfinite(v)):
            raise ValueError("potential must be real and finite at every grid point")
        return v

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def to_dict(self) -> dict:
        params = dict(self.params)
        if "values" in params:
            params["values"] = [float(v) for v in params["values"]]
        return {"kind": self.kind, "params": params}


def gaussian_packet(grid: Grid1D, center: float, width: float, momentum: float = 0.0) -> WaveFunction1D:
    """Normalized Gaussian exp(-(x-c)^2/(4 w^2) + i k x); width is the density std."""
    x = grid.points
    amps = np.exp(-((x - center) ** 2) / (4.0 * width**2) + 1j * momentum * x)
    return WaveFunction1D(grid, amps).normalized()


def gaussian_profile(t: np.ndarray, center: float, width: float) -> np.ndarray:
    """Square-normalized (on the real line) Gaussian amplitude."""
    return (2.0 * np.pi * width**2) ** -0.25 * np.exp(-((t - center) ** 2) / (4.0 * width**2))


def periodic_profile(grid: Grid1D, func: Callable[[np.ndarray], np.ndarray], shift: float = 0.0) -> np.ndarray:
    """Evaluate func(t - shift) with the argument wrapped into the periodic box."""
    arg = grid.points - shift
    arg = grid.x_min + np.mod(arg - grid.x_min, grid.length)
    return func(arg)
