import math

import numpy as np
import pytest
from scipy import integrate, special

from fracspde import presets
from fracspde.fractional_noise import CellIncrements, HurstPair, cell_increments, sample_field
from fracspde.grid import GridSpec
from fracspde.heat_kernel import InitialData
from fracspde.spde_solver import (
    BlowUpError,
    CompanionKind,
    DriftSpec,
    PicardConvergenceError,
    SolverConfig,
    SolverMode,
    heat_part,
    picard_solve,
    shifted_difference,
    snap_theta,
    solve_coupled,
    solve_nonlocal,
    stochastic_convolution,
    sup_mean_square_distance,
    theta_sweep,
    zero_drift,
)

H = HurstPair(0.8, 0.7)


def _noise(g, seed, index=0):
    return cell_increments(sample_field(H, g, seed, index))


def test_solver_config_validation_and_snapping():
    g = GridSpec(1.0, 8.0, 8, 32)
    with pytest.raises(ValueError):
        SolverConfig(g, 0.0)
    with pytest.raises(ValueError):
        SolverConfig(g, 0.5, picard_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(g, 8.0)
    cfg = SolverConfig(g, 0.3)
    assert cfg.shift_cells == 1 and cfg.theta_snapped == 0.25
    assert SolverConfig(g, 0.01).shift_cells == 1
    assert snap_theta(0.9, g) == 1.0
    assert cfg.config_hash() == SolverConfig(g, 0.26).config_hash()


def test_drift_lipschitz_spot_check():
    assert presets.drift("sine(0.5)").check_lipschitz() <= 0.5 + 1e-12
    bad = DriftSpec(lambda u, v: 3 * u, 1.0)
    with pytest.raises(ValueError):
        bad.check_lipschitz()


def test_all_zero_inputs_give_zero_solution():
    g = GridSpec(1.0, 8.0, 16, 32)
    sol = solve_nonlocal(SolverConfig(g, 0.5), None, InitialData.zero(g), zero_drift())
    assert np.all(sol.u == 0) and np.all(sol.companion == 0)


def test_u0_must_vanish_at_boundary():
    g = GridSpec(1.0, 8.0, 8, 16)
    u0 = InitialData(np.ones(17), np.zeros(17))
    with pytest.raises(ValueError):
        solve_nonlocal(SolverConfig(g, 0.5), None, u0, zero_drift())


def test_constant_drift_matches_quadrature_oracle():
    g = GridSpec(1.0, 12.0, 32, 96)
    c = 0.7
    sol = solve_nonlocal(SolverConfig(g, 0.5), None, InitialData.zero(g), presets.drift(f"constant({c})"))
    band = (g.x >= 4 * math.sqrt(g.T)) & (g.x <= g.L - 4 * math.sqrt(g.T))
    assert np.max(np.abs(sol.u[-1, band] - c * g.T)) <= 0.02 * c * g.T
    # full profile against c * int_0^T erf(x / sqrt(2 s)) ds, including the boundary layer
    inner = g.interior_x(4.0)
    ref = np.array([integrate.quad(lambda s: special.erf(x / math.sqrt(2 * s)), 0, g.T)[0] for x in g.x[inner]])
    assert np.max(np.abs(sol.u[-1, inner] - c * ref)) <= 0.02 * c * g.T


def test_solution_invariants():
    g = GridSpec(1.0, 8.0, 16, 32)
    u0 = presets.bump(3.0, 0.6, g)
    cfg = SolverConfig(g, 0.75)
    sol = solve_nonlocal(cfg, _noise(g, 1), u0, presets.drift("sine(0.5)"))
    assert np.array_equal(sol.u[0], u0.samples)
    assert np.all(sol.u[:, 0] == 0)
    assert sol.companion_kind is CompanionKind.THETA_DIFFERENCE
    m = cfg.shift_cells
    assert np.array_equal(sol.companion[:, :-m], (sol.u[:, m:] - sol.u[:, :-m]) / cfg.theta_snapped)
    assert not sol.norm_mask[-m:].any() and sol.norm_mask[:-m].all()
    assert sol.metadata["config_hash"] == cfg.config_hash()


def test_shifted_difference_edge_copy():
    u = np.arange(10.0) ** 2
    d = shifted_difference(u, 2, 0.5)
    assert np.array_equal(d[:-2], (u[2:] - u[:-2]) / 0.5)
    assert np.all(d[-2:] == d[-3])


def test_self_convergence_under_refinement():
    u0_text, g_text, theta = "ramp(2.0)", "linear(0.0, 1.0)", 0.5
    coarse = GridSpec(1.0, 10.0, 16, 40)
    fine = GridSpec(1.0, 10.0, 64, 160)
    sols = []
    for g in (coarse, fine):
        sols.append(solve_nonlocal(SolverConfig(g, theta), None, presets.initial_data(u0_text, g), presets.drift(g_text)))
    sub = sols[1].u[::4, ::4]
    inner = coarse.interior_x()
    err = np.max(np.abs(sols[0].u[:, inner] - sub[:, inner]))
    assert err <= 0.03 * np.max(np.abs(sub[:, inner]))


def test_linearity_in_noise():
    g = GridSpec(1.0, 8.0, 16, 32)
    cfg = SolverConfig(g, 0.5)
    u0, drift = InitialData.zero(g), zero_drift()
    a, b = _noise(g, 1), _noise(g, 2)
    ua = solve_nonlocal(cfg, a, u0, drift).u
    ub = solve_nonlocal(cfg, b, u0, drift).u
    uab = solve_nonlocal(cfg, a + b, u0, drift).u
    assert np.max(np.abs(ua + ub - uab)) <= 1e-10


def test_stochastic_convolution_formula():
    g = GridSpec(1.0, 4.0, 6, 8)
    inc = _noise(g, 4)
    conv = stochastic_convolution(inc)
    from fracspde.heat_kernel import p_eval

    n, j = 5, 3
    ref = sum(
        p_eval(g.t[n] - g.t_mid[i], g.x[j], g.x_mid[k]) * inc.d2[i, k] for i in range(n) for k in range(g.n_x)
    )
    assert conv[n, j] == pytest.approx(ref, rel=1e-12)
    assert np.all(conv[0] == 0) and np.all(conv[:, 0] == 0)
    assert np.all(stochastic_convolution(CellIncrements.zeros(g)) == 0)


def test_noise_only_solution_is_stochastic_convolution():
    # stepping composes P_dt layer by layer; the direct sum differs only by semigroup quadrature
    g = GridSpec(1.0, 8.0, 16, 128)
    inc = _noise(g, 6)
    sol = solve_nonlocal(SolverConfig(g, 0.5), inc, InitialData.zero(g), zero_drift())
    conv = stochastic_convolution(inc)
    inner = g.interior_x()
    assert np.max(np.abs(sol.u - conv)[:, inner]) <= 1e-3 * np.max(np.abs(conv))
    assert np.allclose(sol.u[1], conv[1], rtol=0, atol=1e-14)


def test_coupled_linear_profile_has_unit_gradient():
    g = GridSpec(1.0, 16.0, 16, 128)
    u0 = InitialData(g.x.copy(), np.ones_like(g.x))
    sol = solve_coupled(SolverConfig(g, 0.5), None, u0, zero_drift())
    assert sol.companion_kind is CompanionKind.GRADIENT
    inner = g.interior_x(6.0)
    assert np.max(np.abs(sol.companion[:, inner] - 1.0)) < 1e-2


def test_coupled_gradient_matches_finite_difference():
    g = GridSpec(1.0, 10.0, 32, 160)
    sol = solve_coupled(SolverConfig(g, 0.5), None, presets.bump(3.0, 0.6, g), presets.drift("sine(0.5)"))
    fd = (sol.u[:, 2:] - sol.u[:, :-2]) / (2 * g.dx)
    v = sol.companion[:, 1:-1]
    inner = g.interior_x()[1:-1]
    err = np.linalg.norm((v - fd)[:, inner])
    assert err <= 0.05 * np.linalg.norm(v[:, inner])


def test_nonlocal_companions_approach_coupled_gradient():
    g = GridSpec(1.0, 8.0, 32, 64)
    u0, drift = presets.bump(8 / 3, 0.6, g, 0.9), presets.drift("sine(0.5)")
    noises = [_noise(g, 11, i) for i in range(20)]
    v = np.stack([solve_coupled(SolverConfig(g, g.dx), inc, u0, drift).companion for inc in noises])
    res = theta_sweep(SolverConfig(g, g.dx), [8 * g.dx, 4 * g.dx, 2 * g.dx, g.dx], noises, u0, drift)
    dist = [sup_mean_square_distance(res.companions[a], v, mask=res.norm_mask) for a in range(len(res.thetas))]
    assert np.all(np.diff(dist) < 0)


def test_picard_with_zero_drift_is_immediate():
    g = GridSpec(1.0, 8.0, 16, 32)
    u0, inc = presets.bump(3.0, 0.6, g), _noise(g, 3)
    cfg = SolverConfig(g, 0.5, mode=SolverMode.PICARD)
    sol, trace = picard_solve(cfg, inc, u0, zero_drift(), start="zero")
    assert len(trace) <= 2 and trace[-1] == 0.0
    expected = heat_part(u0, g) + stochastic_convolution(inc)
    expected[0] = u0.samples
    assert np.allclose(sol.u, expected, atol=1e-12)


def test_picard_trace_decreases_for_lipschitz_drift():
    g = GridSpec(1.0, 8.0, 32, 64)
    cfg = SolverConfig(g, 2 * g.dx, picard_tol=1e-8, mode=SolverMode.PICARD)
    _, trace = picard_solve(cfg, _noise(g, 5), presets.bump(3.0, 0.6, g), presets.drift("sine(0.5)"))
    assert trace[-1] < 1e-8
    assert np.all(np.diff(trace[1:]) < 0)


def test_picard_raises_when_out_of_iterations():
    g = GridSpec(1.0, 8.0, 16, 32)
    cfg = SolverConfig(g, 0.5, picard_max_iters=2, mode=SolverMode.PICARD)
    with pytest.raises(PicardConvergenceError) as info:
        picard_solve(cfg, _noise(g, 5), presets.bump(3.0, 0.6, g), presets.drift("sine(0.5)"))
    assert len(info.value.trace) == 2


def test_picard_and_time_stepping_agree():
    diffs = []
    for n in (32, 64):
        g = GridSpec(1.0, 8.0, n, n)
        u0, drift, inc = presets.bump(3.0, 0.6, g), presets.drift("sine(0.5)"), _noise(g, 8)
        ts = solve_nonlocal(SolverConfig(g, 0.5), inc, u0, drift)
        pc, _ = picard_solve(SolverConfig(g, 0.5, picard_tol=1e-9, mode=SolverMode.PICARD), inc, u0, drift)
        diffs.append(np.max(np.abs(ts.u - pc.u)[:, g.interior_x()]))
    assert diffs[1] < diffs[0]
    assert diffs[1] < 2e-9 + 4 * (1.0 / 64)


def test_mode_mismatch_rejected():
    g = GridSpec(1.0, 8.0, 8, 16)
    with pytest.raises(ValueError):
        picard_solve(SolverConfig(g, 0.5), None, InitialData.zero(g), zero_drift())
    with pytest.raises(ValueError):
        solve_nonlocal(SolverConfig(g, 0.5, mode=SolverMode.PICARD), None, InitialData.zero(g), zero_drift())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_is_reported():
    g = GridSpec(1.0, 8.0, 8, 16)
    explosive = DriftSpec(lambda u, v: np.where(u > 0.5, np.inf, 1.0), 1.0, "explosive")
    with pytest.raises(BlowUpError) as info:
        solve_nonlocal(SolverConfig(g, 0.5), None, InitialData.zero(g), explosive)
    assert info.value.time_index >= 1


def test_sup_mean_square_distance_examples():
    gen = np.random.default_rng(0)
    a = gen.standard_normal((5, 4, 6))
    assert sup_mean_square_distance(a, a) == 0.0
    assert sup_mean_square_distance(a, a + 0.3) == pytest.approx(0.09, rel=1e-12)
    b = a.copy()
    b[:, 2, 1] += 2.0
    assert sup_mean_square_distance(a, b) == pytest.approx(4.0)
    assert sup_mean_square_distance(a, b, t_index=1) == 0.0
    mask = np.ones(6, dtype=bool)
    mask[1] = False
    assert sup_mean_square_distance(a, b, mask=mask) == 0.0
    with pytest.raises(ValueError):
        sup_mean_square_distance(a, a[:3])


def test_theta_sweep_structure():
    g = GridSpec(1.0, 8.0, 16, 32)
    u0, drift = presets.bump(3.0, 0.6, g), presets.drift("sine(0.5)")
    noises = [_noise(g, 2, i) for i in range(4)]
    res = theta_sweep(SolverConfig(g, g.dx), [g.dx, 4 * g.dx, 2 * g.dx], noises, u0, drift)
    assert np.all(np.diff(res.thetas) < 0)
    assert res.companions.shape == (3, 4) + g.shape
    assert np.all(np.diag(res.pairwise_d2) == 0)
    assert np.allclose(res.pairwise_d2, res.pairwise_d2.T)
    assert len(res.solutions) == 3
    with pytest.raises(ValueError):
        theta_sweep(SolverConfig(g, g.dx), [g.dx, 1.1 * g.dx], noises, u0, drift)


def test_identical_theta_gives_zero_distance():
    g = GridSpec(1.0, 8.0, 16, 32)
    u0, drift, inc = presets.bump(3.0, 0.6, g), presets.drift("sine(0.5)"), _noise(g, 2)
    a = solve_nonlocal(SolverConfig(g, 0.5), inc, u0, drift)
    b = solve_nonlocal(SolverConfig(g, 0.5), inc, u0, drift)
    assert sup_mean_square_distance(a.companion, b.companion) == 0.0
