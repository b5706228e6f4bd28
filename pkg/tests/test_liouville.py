import math

import numpy as np
import pytest
from scipy.linalg import expm

from qevents.detectors import DetectorSpec
from qevents.grids import Grid1D, PotentialSpec, gaussian_packet
from qevents.liouville import (DENSE_CAP, DensityPair, MasterEquation, compare_ensemble, ensemble_estimate,
                               step_master, trace_norm)
from qevents.nonrel import NonrelConfig, NonrelEngine, PacketSpec
from qevents.numerics import hamiltonian_matrix
from qevents.rng import RngStream

DET = DetectorSpec("gaussian", {"center": 1.0, "width": 1.0, "strength": 1.0})


def _small(n=8):
    g = Grid1D(n, -4.0, 4.0)
    me = MasterEquation.from_grid(g, PotentialSpec("harmonic", {"omega": 0.5}), 1.0, [DET])
    return g, me, DensityPair.pure(gaussian_packet(g, -0.5, 1.0, 0.5).amplitudes, g.dx)


def _vec(dp):
    return np.concatenate([dp.rho0.ravel(), dp.rho1.ravel()])


def test_superoperator_matches_rhs():
    g, me, dp = _small()
    d0, d1 = me.rhs(dp.rho0, dp.rho1)
    np.testing.assert_allclose(me.superoperator() @ _vec(dp), np.concatenate([d0.ravel(), d1.ravel()]), atol=1e-12)


def test_rk4_step_against_expm_oracle_fifth_order():
    g, me, dp = _small()
    big = me.superoperator()
    errs = []
    hs = [0.04, 0.02, 0.01]
    for h in hs:
        exact = expm(big * h) @ _vec(dp)
        errs.append(np.max(np.abs(_vec(me.step(dp, h)) - exact)))
    slopes = np.diff(np.log(errs)) / np.diff(np.log(hs))
    assert np.all(np.abs(slopes - 5.0) < 0.3)


def test_step_master_single_detector():
    g, me, dp = _small()
    a = step_master(dp, me.hamiltonian, DET.on_grid(g), 0.01)
    b = me.step(dp, 0.01)
    np.testing.assert_array_equal(a.rho0, b.rho0)


def test_pure_state_branch_follows_damped_flow():
    g = Grid1D(16, -6.0, 6.0)
    psi = gaussian_packet(g, 0.0, 1.0, 0.3).amplitudes * math.sqrt(g.dx)
    me = MasterEquation.from_grid(g, None, 1.0, [DET])
    (dp,) = me.evolve(DensityPair(np.outer(psi, psi.conj()), np.zeros((16, 16))), [1.0], dt=1e-3)
    k = -1j * hamiltonian_matrix(g) - 0.5 * np.diag(DET.on_grid(g) ** 2)
    phi = expm(k) @ psi
    np.testing.assert_allclose(dp.rho0, np.outer(phi, phi.conj()), atol=1e-10)


def test_trace_hermiticity_positivity_preserved():
    g, me, dp = _small(16)
    drift = []
    states = me.evolve(dp, [0.5, 2.0, 5.0], monitor=lambda t, d: drift.append(abs(d.total_trace - 1)))
    assert max(drift) < 1e-8
    for s in states:
        assert s.hermiticity_error() < 1e-12
        assert s.min_eigenvalue() > -1e-8


def test_positivity_violation_is_truncation_error():
    # RK4 is not positivity preserving; any negative eigenvalue must shrink like dt^4
    g, me, dp = _small(16)
    neg = [-me.evolve(dp, [5.0], dt=me.accurate_dt() * f)[0].min_eigenvalue() for f in (1.0, 0.5)]
    assert neg[0] < 1e-8
    if neg[0] > 1e-12:
        assert neg[0] / max(neg[1], 1e-300) > 10


def test_constant_rate_counter_population():
    g = Grid1D(8, -4.0, 4.0)
    kappa = 0.7
    me = MasterEquation.from_grid(g, None, 1.0, [DetectorSpec("constant", {"strength": math.sqrt(kappa)})])
    dp = DensityPair.pure(gaussian_packet(g, 0, 1).amplitudes, g.dx)
    (out,) = me.evolve(dp, [2.0])
    assert np.trace(out.rho1).real == pytest.approx(1 - math.exp(-kappa * 2.0), abs=1e-9)


def test_dense_cap_enforced():
    with pytest.raises(ValueError):
        MasterEquation.from_grid(Grid1D(DENSE_CAP * 2, -1, 1), None, 1.0, [DET])


def test_trace_norm_of_difference():
    a = np.diag([0.7, 0.3])
    b = np.diag([0.5, 0.5])
    assert trace_norm(a - b) == pytest.approx(0.4)


def _engine(n=16):
    cfg = NonrelConfig(Grid1D(n, -6.0, 6.0), (DET,), PacketSpec(0.0, 1.0, 0.0), horizon=2.0)
    return NonrelEngine(cfg)


def test_ensemble_estimate_from_records_is_unbiased_in_trace():
    eng = _engine()
    recs = [eng.run(RngStream(8, i), sample_times=[1.0]) for i in range(400)]
    (est,) = ensemble_estimate(recs, [1.0], eng.grid.dx)
    assert np.trace(est.rho0).real + np.trace(est.rho1).real == pytest.approx(1.0, abs=1e-12)


def test_ensemble_error_shrinks_like_inverse_sqrt_n():
    eng = _engine()
    sizes = [100, 400, 1600]
    mean_err = []
    for j, n in enumerate(sizes):
        # independent replicates: no stream is shared between sizes
        errs = [compare_ensemble(eng, n, 1000 * j + rep, [1.0])["rows"][0]["trace_distance_rho0"]
                for rep in range(8)]
        mean_err.append(np.mean(errs))
    slope = np.polyfit(np.log(sizes), np.log(mean_err), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.15)


def test_compare_ensemble_report_shape():
    rep = compare_ensemble(_engine(), 200, 1, [0.5, 1.0, 2.0])
    assert [r["time"] for r in rep["rows"]] == [0.5, 1.0, 2.0]
    assert rep["max_trace_drift"] < 1e-8
    assert all(r["trace_distance_rho0"] < 0.5 for r in rep["rows"])
