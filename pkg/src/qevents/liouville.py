"""Ensemble dynamics of the particle + counter system.

The statistical state is a pair (rho0, rho1) of positive operators, one per
counter state, obeying

    rho0' = -i[H, rho0] - {Lambda, rho0} / 2
    rho1' = -i[H, rho1] + sum_i g_i rho0 g_i,      Lambda = sum_i g_i^2

Matrices are dense and expressed in the orthonormal grid-point basis
(amplitude psi_j sqrt(dx)). This module is the deterministic oracle against
which trajectory ensembles are checked.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import hamiltonian_matrix
from .rng import RngStream

DENSE_CAP = 128
ACCURACY_FRACTION = 0.05


@dataclass(frozen=True, eq=False)
class DensityPair:
    rho0: np.ndarray
    rho1: np.ndarray

    @classmethod
    def pure(cls, amplitudes: np.ndarray, dx: float) -> "DensityPair":
        c = np.asarray(amplitudes, dtype=complex) * math.sqrt(dx)
        return cls(np.outer(c, c.conj()), np.zeros((c.size, c.size), dtype=complex))

    @property
    def total_trace(self) -> float:
        return float(np.trace(self.rho0).real + np.trace(self.rho1).real)

    def hermiticity_error(self) -> float:
        return max(float(np.max(np.abs(r - r.conj().T))) for r in (self.rho0, self.rho1))

    def min_eigenvalue(self) -> float:
        return min(float(np.linalg.eigvalsh(0.5 * (r + r.conj().T))[0]) for r in (self.rho0, self.rho1))


class MasterEquation:
    """Dense generator for the counter-coupled master equation."""

    def __init__(self, hamiltonian: np.ndarray, couplings: Sequence[np.ndarray], cap: int = DENSE_CAP):
        h = np.asarray(hamiltonian, dtype=complex)
        n = h.shape[0]
        if h.shape != (n, n):
            raise ValueError(f"Hamiltonian must be square, got shape {h.shape}")
        if n > cap:
            raise ValueError(f"dimension {n} exceeds the dense cap {cap}")
        self.n = n
        self.hamiltonian = h
        self.couplings = [np.asarray(g, dtype=float) for g in couplings]
        for g in self.couplings:
            if g.shape != (n,):
                raise ValueError("each coupling must be a diagonal given as a length-n vector")
            if np.any(g < 0):
                raise ValueError("couplings must be non-negative")
        self.rate = sum((g**2 for g in self.couplings), np.zeros(n))
        # rho0' = K rho0 + rho0 K^dagger with K = -iH - Lambda/2
        self._k = -1j * h - 0.5 * np.diag(self.rate)

    @classmethod
    def from_grid(cls, grid, potential=None, mass: float = 1.0, detectors=(), cap: int = DENSE_CAP):
        if grid.n_points > cap:
            raise ValueError(f"grid has {grid.n_points} points, above the dense cap {cap}")
        h = hamiltonian_matrix(grid, potential, mass)
        return cls(h, [d.on_grid(grid) for d in detectors if d.active], cap)

    def rhs(self, rho0: np.ndarray, rho1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = self._k
        d0 = k @ rho0 + rho0 @ k.conj().T
        d1 = -1j * (self.hamiltonian @ rho1 - rho1 @ self.hamiltonian)
        for g in self.couplings:
            d1 = d1 + g[:, None] * rho0 * g[None, :]
        return d0, d1

    def step(self, dp: DensityPair, dt: float) -> DensityPair:
        """One classical RK4 step."""
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        r0, r1 = dp.rho0, dp.rho1
        a0, a1 = self.rhs(r0, r1)
        b0, b1 = self.rhs(r0 + 0.5 * dt * a0, r1 + 0.5 * dt * a1)
        c0, c1 = self.rhs(r0 + 0.5 * dt * b0, r1 + 0.5 * dt * b1)
        d0, d1 = self.rhs(r0 + dt * c0, r1 + dt * c1)
        return DensityPair(
            r0 + dt / 6.0 * (a0 + 2 * b0 + 2 * c0 + d0),
            r1 + dt / 6.0 * (a1 + 2 * b1 + 2 * c1 + d1),
        )

    def stable_dt(self) -> float:
        """Step keeping dt * (Liouvillian spectral radius bound) <= 2, inside RK4's stability region."""
        e = np.linalg.eigvalsh(self.hamiltonian)
        radius = (e[-1] - e[0]) + float(np.max(self.rate, initial=0.0))
        return 2.0 / radius if radius > 0 else np.inf

    def accurate_dt(self) -> float:
        """Default step: a twentieth of the stability step, keeping the fastest mode's RK4 error near 1e-7 per step."""
        return ACCURACY_FRACTION * self.stable_dt()

    def evolve(self, dp: DensityPair, times: Sequence[float], dt: float | None = None,
               t0: float = 0.0, monitor=None) -> list[DensityPair]:
        """States at each of ``times`` (ascending, >= t0). ``monitor(t, dp)`` sees every step.

        The step is ``dt`` when given (capped at the stability step), else :meth:`accurate_dt`.
        """
        dt_max = min(dt, self.stable_dt()) if dt is not None else self.accurate_dt()
        if not np.isfinite(dt_max):
            dt_max = 0.01
        out = []
        t = t0
        for target in times:
            if target < t:
                raise ValueError("sample times must be ascending and not before t0")
            n = max(0, math.ceil((target - t) / dt_max - 1e-9))
            for j in range(n):
                dp = self.step(dp, (target - t) / n)
                if monitor is not None:
                    monitor(t + (j + 1) * (target - t) / n, dp)
            t = target
            out.append(dp)
        return out

    def superoperator(self) -> np.ndarray:
        """Generator acting on vec(rho0) ++ vec(rho1) (row-major vec), size 2n^2."""
        n = self.n
        eye = np.eye(n)
        k = self._k
        # vec(A X B) = kron(A, B^T) vec(X) for row-major flattening
        l00 = np.kron(k, eye) + np.kron(eye, k.conj())
        l11 = -1j * (np.kron(self.hamiltonian, eye) - np.kron(eye, self.hamiltonian.T))
        l10 = sum((np.kron(np.diag(g), np.diag(g)) for g in self.couplings), np.zeros((n * n, n * n)))
        zero = np.zeros((n * n, n * n))
        return np.block([[l00, zero], [l10, l11]])


def step_master(dp: DensityPair, hamiltonian: np.ndarray, coupling: np.ndarray, dt: float,
                cap: int = DENSE_CAP) -> DensityPair:
    """One RK4 step of the single-detector master equation with coupling diagonal g."""
    return MasterEquation(hamiltonian, [coupling], cap).step(dp, dt)


def trace_norm(a: np.ndarray) -> float:
    """Schatten-1 norm of a Hermitian matrix."""
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (a + a.conj().T)))))


@dataclass
class EnsembleEstimate:
    time: float
    n_trajectories: int
    rho0: np.ndarray
    rho1: np.ndarray
    stderr0: np.ndarray
    stderr1: np.ndarray

    def pair(self) -> DensityPair:
        return DensityPair(self.rho0, self.rho1)


def ensemble_estimate(records, sample_times: Sequence[float], dx: float) -> list[EnsembleEstimate]:
    """Monte-Carlo estimate of (rho0, rho1) from trajectories that stored samples.

    Each trajectory contributes its normalized state to rho0 while its counter
    is still off and to rho1 afterwards, with weight 1/N; the fraction of
    survivors thus carries the norm that the unnormalized rho0 loses.
    """
    records = list(records)
    if not records:
        raise ValueError("empty ensemble")
    n_traj = len(records)
    out = []
    for s in sample_times:
        sums = None
        for rec in records:
            snap = next((x for x in rec.samples if x.time == s), None)
            if snap is None:
                raise ValueError(f"trajectory {rec.rng.stream_index} has no sample at t={s}")
            c = snap.state * math.sqrt(dx)
            outer = np.outer(c, c.conj())
            if sums is None:
                n = c.size
                sums = [np.zeros((n, n), complex), np.zeros((n, n), complex),
                        np.zeros((n, n)), np.zeros((n, n))]
            slot = 0 if snap.clicks == 0 else 1
            sums[slot] += outer
            sums[slot + 2] += np.abs(outer) ** 2
        means = [sums[0] / n_traj, sums[1] / n_traj]
        errs = []
        for slot in (0, 1):
            second = sums[slot + 2] / n_traj
            var = np.maximum(second - np.abs(means[slot]) ** 2, 0.0)
            errs.append(np.sqrt(var / max(n_traj - 1, 1)))
        out.append(EnsembleEstimate(float(s), n_traj, means[0], means[1], errs[0], errs[1]))
    return out


def compare_ensemble(engine, n_trajectories: int, seed: int, sample_times: Sequence[float],
                     threads: int = 1, records_out: list | None = None) -> dict:
    """Run a trajectory ensemble on a single-detector nonrel engine and score it against the master equation.

    The trajectory records are appended to ``records_out`` when given.
    """
    cfg = engine.config
    grid = cfg.grid
    master = MasterEquation.from_grid(grid, cfg.potential, cfg.mass, cfg.detectors)
    dp0 = DensityPair.pure(engine.initial_state(), grid.dx)
    trace_errors = []

    def monitor(t, dp):
        trace_errors.append(abs(dp.total_trace - 1.0))

    exact = master.evolve(dp0, sample_times, dt=engine.dt, monitor=monitor)

    def one(i):
        return engine.run(RngStream(seed, i), sample_times=sample_times)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        records = list(pool.map(one, range(n_trajectories)))
    if records_out is not None:
        records_out.extend(records)
    est = ensemble_estimate(records, sample_times, grid.dx)
    rows = []
    for e, x in zip(est, exact):
        rows.append({
            "time": e.time,
            "trace_distance_rho0": trace_norm(e.rho0 - x.rho0),
            "trace_distance_rho1": trace_norm(e.rho1 - x.rho1),
            "trace_rho0_exact": float(np.trace(x.rho0).real),
            "trace_rho0_estimate": float(np.trace(e.rho0).real),
            "stderr_trace_rho0": float(math.sqrt(max(np.trace(e.rho0).real * (1 - np.trace(e.rho0).real), 0.0)
                                                 / max(e.n_trajectories - 1, 1))),
            "max_entry_stderr_rho1": float(np.max(e.stderr1)),
        })
    return {
        "n_trajectories": n_trajectories,
        "seed": seed,
        "sample_times": [float(s) for s in sample_times],
        "rows": rows,
        "max_trace_drift": float(max(trace_errors, default=0.0)),
    }
