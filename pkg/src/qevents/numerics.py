"""Differential operators, inner products and Dirac algebra on periodic grids."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import (
    Grid1D,
    Grid2D,
    PotentialSpec,
    SpinorField2D,
    WaveFunction1D,
    _same_grid,
)

SPECTRAL = "spectral"
FINITE_DIFFERENCE = "finite-difference"
BACKENDS = (SPECTRAL, FINITE_DIFFERENCE)

# Minkowski metric, signature (+, -, -, -)
ETA = np.diag([1.0, -1.0, -1.0, -1.0])


def second_derivative(values: np.ndarray, grid: Grid1D, backend: str = SPECTRAL, axis: int = 0) -> np.ndarray:
    if backend == SPECTRAL:
        grid.check_spectral()
        k = grid.wavenumbers
        shape = [1] * values.ndim
        shape[axis] = k.size
        return np.fft.ifft(-(k**2).reshape(shape) * np.fft.fft(values, axis=axis), axis=axis)
    if backend == FINITE_DIFFERENCE:
        return (np.roll(values, -1, axis) - 2.0 * values + np.roll(values, 1, axis)) / grid.dx**2
    raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")


def first_derivative(values: np.ndarray, grid: Grid1D, axis: int = 0) -> np.ndarray:
    """Spectral d/dx along ``axis``. The Nyquist mode is zeroed to keep the result real for real input."""
    grid.check_spectral()
    k = grid.wavenumbers.copy()
    if grid.n_points % 2 == 0:
        k[grid.n_points // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = k.size
    return np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(values, axis=axis), axis=axis)


def apply_hamiltonian(
    psi: WaveFunction1D,
    potential: PotentialSpec | None = None,
    mass: float = 1.0,
    hbar: float = 1.0,
    backend: str = SPECTRAL,
) -> WaveFunction1D:
    """Return H psi with H = -(hbar^2 / 2m) d^2/dx^2 + V(x).

    ``mass=np.inf`` switches the kinetic term off.
    """
    if not mass > 0:
        raise ValueError(f"mass must be positive, got {mass}")
    potential = potential or PotentialSpec()
    out = potential.on_grid(psi.grid) * psi.amplitudes
    if np.isfinite(mass):
        out = out - (hbar**2 / (2.0 * mass)) * second_derivative(psi.amplitudes, psi.grid, backend)
    elif backend == SPECTRAL:
        psi.grid.check_spectral()
    return WaveFunction1D(psi.grid, out)


def hamiltonian_matrix(
    grid: Grid1D, potential: PotentialSpec | None = None, mass: float = 1.0, backend: str = SPECTRAL
) -> np.ndarray:
    """Dense matrix of :func:`apply_hamiltonian` in the grid-point basis."""
    n = grid.n_points
    cols = [
        apply_hamiltonian(WaveFunction1D(grid, np.eye(n)[j]), potential, mass, backend=backend).amplitudes
        for j in range(n)
    ]
    return np.array(cols).T


def l2_inner(phi: WaveFunction1D, psi: WaveFunction1D) -> complex:
    """(phi, psi) = sum conj(phi_i) psi_i dx, antilinear in the first slot."""
    _same_grid(phi, psi)
    return complex(np.vdot(phi.amplitudes, psi.amplitudes) * phi.grid.dx)


# ---------------------------------------------------------------- Dirac algebra

PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


@dataclass(frozen=True, eq=False)
class GammaSet:
    """Dirac matrices in the standard (Dirac) representation."""

    matrices: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]

    @classmethod
    def standard(cls) -> "GammaSet":
        eye2 = np.eye(2, dtype=complex)
        zero = np.zeros((2, 2), dtype=complex)
        g0 = np.block([[eye2, zero], [zero, -eye2]])
        spatial = [np.block([[zero, s], [-s, zero]]) for s in PAULI]
        mats = (g0, *spatial)
        for m in mats:
            m.setflags(write=False)
        return cls(mats)

    def __getitem__(self, mu: int) -> np.ndarray:
        return self.matrices[mu]

    def anticommutator(self, mu: int, nu: int) -> np.ndarray:
        a, b = self.matrices[mu], self.matrices[nu]
        return a @ b + b @ a

    @property
    def p_plus(self) -> np.ndarray:
        return 0.5 * (np.eye(4) + self.matrices[0])


GAMMA = GammaSet.standard()
GAMMA0_DIAG = np.array([1.0, 1.0, -1.0, -1.0])


def indefinite_product(phi: SpinorField2D, psi: SpinorField2D) -> complex:
    """<phi, psi> = sum phi^dagger gamma^0 psi dx dt (antilinear in phi, not positive definite)."""
    _same_grid(phi, psi)
    return complex(
        np.sum(np.conj(phi.amplitudes) * (GAMMA0_DIAG * psi.amplitudes)) * phi.grid.area_element
    )


def indefinite_norm2(amplitudes: np.ndarray, area_element: float) -> float:
    """Real part of <psi, psi> for raw (n_x, n_t, 4) amplitudes."""
    w = np.abs(amplitudes) ** 2
    return float((w[..., 0].sum() + w[..., 1].sum() - w[..., 2].sum() - w[..., 3].sum()) * area_element)


def _spinor_matmul(matrix: np.ndarray, amps: np.ndarray) -> np.ndarray:
    return amps @ matrix.T


def apply_dirac(
    psi: SpinorField2D,
    mass: float,
    charge: float = 0.0,
    vector_potential: tuple[np.ndarray, np.ndarray] | None = None,
) -> SpinorField2D:
    """Return D psi = i gamma^mu (d_mu + i e A_mu) psi - m psi.

    Fields depend on (x, t) only: d_0 = d/dt, d_1 = d/dx, d_2 = d_3 = 0.
    ``vector_potential`` is an optional static pair (A_0, A_1) tabulated on the
    (n_x, n_t) grid; covariant components.
    """
    grid = psi.grid
    amps = psi.amplitudes
    d_t = first_derivative(amps, grid.grid_t, axis=1)
    d_x = first_derivative(amps, grid.grid_x, axis=0)
    if vector_potential is not None and charge != 0.0:
        a0, a1 = (np.asarray(a, dtype=float)[..., None] for a in vector_potential)
        d_t = d_t + 1j * charge * a0 * amps
        d_x = d_x + 1j * charge * a1 * amps
    out = 1j * (_spinor_matmul(GAMMA[0], d_t) + _spinor_matmul(GAMMA[1], d_x)) - mass * amps
    return SpinorField2D(grid, out)


def dirac_symbol(omega: np.ndarray, k: np.ndarray, mass: float) -> np.ndarray:
    """Fourier symbol of D for modes exp(i (k x + omega t)); shape (..., 4, 4).

    d_t -> i omega and d_x -> i k, so D -> -(gamma^0 omega + gamma^1 k) - m.
    """
    omega = np.asarray(omega, dtype=float)[..., None, None]
    k = np.asarray(k, dtype=float)[..., None, None]
    return -(GAMMA[0] * omega + GAMMA[1] * k) - mass * np.eye(4)


def spectral_wavenumbers_2d(grid: Grid2D, drop_nyquist: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Broadcastable (k_x, omega_t) arrays of shape (n_x, 1) and (1, n_t)."""
    kx = grid.grid_x.wavenumbers.copy()
    kt = grid.grid_t.wavenumbers.copy()
    if drop_nyquist:
        if grid.grid_x.n_points % 2 == 0:
            kx[grid.grid_x.n_points // 2] = 0.0
        if grid.grid_t.n_points % 2 == 0:
            kt[grid.grid_t.n_points // 2] = 0.0
    return kx[:, None], kt[None, :]
