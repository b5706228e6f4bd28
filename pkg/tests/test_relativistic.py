import math

import numpy as np
import pytest
from scipy import stats
from scipy.linalg import expm

from qevents.detectors import DetectorSpec
from qevents.grids import Grid1D, Grid2D, SpinorField2D
from qevents.numerics import GAMMA, apply_dirac, dirac_symbol, indefinite_norm2, indefinite_product
from qevents.pdp import PropagationError
from qevents.relativistic import (DiracSquared, RelConfig, RelEngine, RelStepper, SpinorPacket, apply_coupling,
                                  apply_dirac_squared, coupling_expectation, evolve_rel_damped, on_shell_spinor,
                                  rel_find_jump_time, rel_jump, rel_select_detector, run_rel_trajectory,
                                  selection_weights)
from qevents.rng import RngStream

CONST = DetectorSpec("constant", {"strength": 1.0})
GAUSS = DetectorSpec("gaussian", {"center": 1.0, "width": 1.0, "strength": 0.8})


def _random_field(grid, r):
    return SpinorField2D(grid, r.normal(size=(*grid.shape, 4)) + 1j * r.normal(size=(*grid.shape, 4)))


def test_mode_propagator_matches_expm(grid2d_16):
    d2 = DiracSquared(grid2d_16, 0.6, 1.3)
    h = 0.07
    props = d2.mode_matrices(h)
    syms = d2.mode_matrices()
    for i, j in [(0, 0), (3, 1), (1, 6), (7, 2), (5, 5)]:
        np.testing.assert_allclose(props[i, j], expm(-1j * h * syms[i, j]), atol=1e-13)
        sym = dirac_symbol(d2.omega[i, j], d2.k[i, j], 0.6)
        np.testing.assert_allclose(syms[i, j], sym @ sym / 2.6, atol=1e-13)


def test_spectral_and_double_application_agree(grid2d_16, rng):
    cfg = RelConfig(grid2d_16, (CONST,), dirac_mass=0.9, evolution_mass=1.1)
    psi = _random_field(grid2d_16, rng)
    a = apply_dirac_squared(psi, cfg, "spectral").amplitudes
    b = apply_dirac_squared(psi, cfg, "double").amplitudes
    assert np.max(np.abs(a - b)) < 1e-10 * np.max(np.abs(a))


def test_dirac_self_adjoint_with_static_field(grid2d_16, rng):
    x = grid2d_16.grid_x.points[:, None] * np.ones(grid2d_16.shape)
    field = (0.3 * np.cos(x), 0.2 * np.sin(x))
    phi, psi = _random_field(grid2d_16, rng), _random_field(grid2d_16, rng)
    lhs = indefinite_product(phi, apply_dirac(psi, 0.5, 1.0, field))
    rhs = indefinite_product(apply_dirac(phi, 0.5, 1.0, field), psi)
    assert abs(lhs - rhs) < 1e-10 * abs(lhs)


def test_on_shell_spinor():
    u = on_shell_spinor(math.hypot(1.2, 0.7), 1.2, 0.7)
    assert np.linalg.norm((GAMMA[0] * math.hypot(1.2, 0.7) - GAMMA[1] * 1.2 - 0.7 * np.eye(4)) @ u) < 1e-12
    with pytest.raises(ValueError):
        on_shell_spinor(3.0, 1.0, 0.5)


def test_initial_state_normalized_and_negative_rejected(grid2d_16):
    cfg = RelConfig(grid2d_16, (CONST,), packet=SpinorPacket(spinor="on-shell", momentum=0.5))
    psi = cfg.initial_state()
    assert indefinite_norm2(psi.amplitudes, grid2d_16.area_element) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        RelConfig(grid2d_16, (CONST,), packet=SpinorPacket(spinor=(0, 0, 1, 0))).initial_state()


def test_coupling_expectation_positive_and_matches_indefinite(grid2d_16, rng):
    for _ in range(50):
        psi = _random_field(grid2d_16, rng)
        det = DetectorSpec("tabulated", {"values": rng.uniform(0, 2, 16).tolist()})
        lhs = indefinite_product(psi, apply_coupling(psi, det, 2))
        rhs = coupling_expectation(psi, det, 2)
        assert rhs >= 0
        assert abs(lhs - rhs) <= 1e-12 * rhs


def _dense_generator(cfg, rate):
    """Dense matrix of -i D^2/2M - Lambda/2 acting on the flattened spinor field."""
    grid = cfg.grid
    n = grid.shape[0] * grid.shape[1] * 4
    cols = []
    for j in range(n):
        e = np.zeros(n, complex)
        e[j] = 1.0
        f = SpinorField2D(grid, e.reshape(*grid.shape, 4))
        col = -1j * apply_dirac_squared(f, cfg, "double").amplitudes
        damp = np.zeros_like(col)
        damp[..., :2] = (0.5 * rate[:, None, None]) * f.amplitudes[..., :2]
        cols.append((col - damp).ravel())
    return np.array(cols).T


def test_strang_step_against_dense_oracle():
    grid = Grid2D(Grid1D(8, -4.0, 4.0), Grid1D(8, -4.0, 4.0))
    cfg = RelConfig(grid, (GAUSS,), dirac_mass=0.5, evolution_mass=2.0)
    rate = GAUSS.on_grid(grid.grid_x) ** 2
    gen = _dense_generator(cfg, rate)
    psi = cfg.initial_state()
    errs = []
    for h in (0.02, 0.01):
        exact = (expm(gen * h) @ psi.amplitudes.ravel()).reshape(psi.amplitudes.shape)
        errs.append(np.max(np.abs(evolve_rel_damped(psi, cfg, h).amplitudes - exact)))
    assert errs[0] / errs[1] == pytest.approx(8.0, rel=0.2)
    assert errs[1] < 1e-6


def test_indefinite_norm_monotone_along_flow(grid2d_16):
    cfg = RelConfig(grid2d_16, (GAUSS,), dirac_mass=0.5, evolution_mass=2.0,
                    packet=SpinorPacket(spinor="on-shell", momentum=0.5), horizon=2.0)
    eng = RelEngine(cfg)
    st = eng.stepper((True,))
    state = eng.initial_state()
    n = eng.norm2(state)
    for _ in range(100):
        state = st.step(state, eng.dt)
        assert eng.norm2(state) <= n + 1e-12
        n = eng.norm2(state)


def test_norm_curve_matches_step(grid2d_16):
    cfg = RelConfig(grid2d_16, (GAUSS,), dirac_mass=0.5, evolution_mass=2.0)
    eng = RelEngine(cfg)
    st = eng.stepper((True,))
    state = eng.initial_state()
    curve = st.norm_curve(state)
    for s in (0.0, 0.3 * eng.dt, eng.dt):
        assert curve(s) == pytest.approx(eng.norm2(st.step(state, s)), abs=1e-13)


def test_jump_unit_norm_in_upper_subspace(grid2d_16, rng):
    psi = _random_field(grid2d_16, rng)
    out = rel_jump(psi, GAUSS)
    assert indefinite_norm2(out.amplitudes, grid2d_16.area_element) == pytest.approx(1.0, abs=1e-12)
    assert np.all(out.amplitudes[..., 2:] == 0)


def test_selection_three_detectors(grid2d_16, rng):
    dets = [DetectorSpec("gaussian", {"center": c, "width": 1.0, "strength": s})
            for c, s in ((-2, 1.0), (0, 0.5), (2, 0.8))]
    psi = _random_field(grid2d_16, rng)
    w = selection_weights(psi, dets)
    probs = w / w.sum()
    gen = np.random.default_rng(1)
    n = 20_000
    picks = [rel_select_detector(psi, dets, gen.random())[0] for _ in range(n)]
    counts = np.bincount(picks, minlength=3)
    assert np.all(np.abs(counts - n * probs) < 4 * np.sqrt(n * probs * (1 - probs)))
    _, p = rel_select_detector(psi, dets, 0.5)
    assert abs(p.sum() - 1) <= 1e-12
    literal = selection_weights(psi, dets, "literal")
    assert not np.allclose(literal / literal.sum(), probs)


def test_jump_time_constant_rate_on_upper_packet(grid2d_16):
    cfg = RelConfig(grid2d_16, (CONST,), dirac_mass=0.0, evolution_mass=1.0, horizon=5.0)
    t1, _ = rel_find_jump_time(cfg.initial_state(), cfg, 0.5)
    assert t1 == pytest.approx(math.log(2), abs=1e-9)


def test_cache_exact_and_deterministic():
    grid = Grid2D(Grid1D(16, -6.0, 6.0), Grid1D(16, -6.0, 6.0))
    cfg = RelConfig(grid, (GAUSS, DetectorSpec("gaussian", {"center": -1.0, "width": 1.0})), dirac_mass=0.5,
                    evolution_mass=2.0, horizon=3.0)
    eng = RelEngine(cfg)
    for i in range(5):
        a = eng.run(RngStream(4, i), sample_times=[1.0, 2.0])
        b = run_rel_trajectory(cfg, RngStream(4, i), sample_times=[1.0, 2.0])
        assert a.to_dict() == b.to_dict()
        for e in a.events:
            assert abs(sum(e.probabilities) - 1) <= 1e-12


def test_exponential_law_small_ensemble():
    grid = Grid2D(Grid1D(16, -6.0, 6.0), Grid1D(16, -6.0, 6.0))
    cfg = RelConfig(grid, (CONST,), dirac_mass=0.0, evolution_mass=1.0, horizon=15.0)
    eng = RelEngine(cfg)
    t = np.array([eng.run(RngStream(21, i), max_events=1).click_times[0] for i in range(800)])
    assert stats.kstest(t, "expon").pvalue > 0.001


def test_explicit_dt_above_bound_rejected(grid2d_16):
    with pytest.raises(ValueError):
        RelEngine(RelConfig(grid2d_16, (CONST,), dt=1.0))


def test_weighting_validated(grid2d_16):
    with pytest.raises(ValueError):
        RelConfig(grid2d_16, (CONST,), weighting="other")
