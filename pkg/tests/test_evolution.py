"""Time evolution: free flow, linearized right inverse, nonlinear reference."""

import numpy as np
import pytest

from semiflow.evolution import (
    Diverged,
    TimeGrid,
    TrajectoryField,
    default_time_grid,
    duhamel_solution,
    free_flow,
    free_flow_field,
    linearized_residual,
    reference_nonlinear_solve,
    solve_linearized,
    solve_linearized_auto,
)
from semiflow.spectral import (
    NormTag,
    SpectralField,
    conjugate_pair_residual,
    hs_norm,
    linf_norm,
    make_context,
    plain_hs_norm,
    random_band_limited,
)
from semiflow.systems import DataProfile, benchmark_system, make_initial_datum

SYS1 = benchmark_system(1)


def ctx1(eps=0.25, n=64):
    return make_context(1, 2 * np.pi, n, eps)


def pair(ctx, seed, kmax=6, decay=1.0):
    rng = np.random.default_rng(seed)
    return random_band_limited(ctx, 2, kmax, rng, decay=decay, conjugate_pair=True)


def const_traj(f, times):
    """Time-constant trajectory holding the field f (no derivative attached)."""
    coef = np.broadcast_to(f.coef, (len(times),) + f.coef.shape).copy()
    return TrajectoryField(f.ctx, times, coef)


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(0.0, 4)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
    tg = TimeGrid(0.5, 8)
    assert tg.dt == 0.0625
    assert tg.times[0] == 0.0 and tg.times[-1] == 0.5
    assert tg.refined(4) == TimeGrid(0.5, 32)


def test_default_time_grid():
    assert default_time_grid(1) == TimeGrid(1.0, 512)
    assert default_time_grid(2) == TimeGrid(0.5, 512)


def test_trajectory_slab_count_must_match_times():
    ctx = ctx1()
    with pytest.raises(ValueError):
        TrajectoryField(ctx, np.array([0.0, 1.0]), np.zeros((3, 4) + ctx.shape))


def test_trajectory_norms_single_mode():
    # one unit mode at xi=2, eps=1/2, s=2: sobolev weight 2, so C0 norm 2;
    # |dt u| = xi^2 = 4 at weight 1, eps^2 * 4 = 1; C1 norm 2 + 1 = 3 exactly
    ctx = ctx1(eps=0.5)
    coef = np.zeros((4,) + ctx.shape, dtype=complex)
    coef[0, 2] = 1.0
    traj = free_flow(SYS1, SpectralField(ctx, coef), TimeGrid(1.0, 8))
    assert traj.norm(NormTag("C0Hs", s=2.0)) == 2.0
    assert traj.norm(NormTag("C1Hs", s=2.0)) == 3.0
    assert abs(traj.norm(NormTag("Linf")) - (2 * np.pi) ** -0.5) < 1e-12


def test_trajectory_without_derivative_rejects_c1_norm():
    ctx = ctx1()
    traj = const_traj(pair(ctx, 0), np.linspace(0.0, 1.0, 5))
    with pytest.raises(ValueError):
        traj.dt_field(0)
    with pytest.raises(ValueError):
        traj.norm(NormTag("C1Hs", s=2.0))


def test_trajectory_smooth_truncates_scaled_frequency():
    ctx = ctx1(eps=0.5)
    coef = np.zeros((1, 4) + ctx.shape, dtype=complex)
    coef[0, 0, 2] = 1.0  # eps|xi| = 1
    coef[0, 0, 8] = 1.0  # eps|xi| = 4
    traj = TrajectoryField(ctx, [0.0], coef, coef.copy())
    cut = traj.smooth(1)
    assert cut.coef[0, 0, 2] == 1.0 and cut.coef[0, 0, 8] == 0.0
    assert cut.dt_coef[0, 0, 8] == 0.0


def test_max_active_frequency_ignores_roundoff_mass():
    ctx = ctx1()
    coef = np.zeros((1, 4) + ctx.shape, dtype=complex)
    coef[0, 0, 3] = 1.0
    coef[0, 0, 7] = 1e-20
    traj = TrajectoryField(ctx, [0.0], coef)
    assert traj.max_active_frequency() == 3.0
    assert TrajectoryField.zero(ctx, [0.0], 4).max_active_frequency() == 0.0


# -- free flow -----------------------------------------------------------------


def test_free_flow_initial_slice_is_datum():
    ctx = ctx1()
    u0 = pair(ctx, 1)
    traj = free_flow(SYS1, u0, TimeGrid(1.0, 4))
    assert np.array_equal(traj.coef[0], u0.coef)


def test_free_flow_single_mode_phase():
    # lambda' = (1,-1,-1,1); mode xi=2 at t=1/2 picks up phase e^{+-2i}
    ctx = ctx1(eps=0.5)
    coef = np.zeros((4,) + ctx.shape, dtype=complex)
    coef[0, 2] = 1.0
    coef[1, 2] = 1.0
    traj = free_flow(SYS1, SpectralField(ctx, coef), TimeGrid(0.5, 1))
    assert traj.coef[1, 0, 2] == np.exp(2j)
    assert traj.coef[1, 1, 2] == np.exp(-2j)


def test_free_flow_conserves_sobolev_norms():
    ctx = ctx1(eps=0.25)
    u0 = pair(ctx, 2, kmax=10)
    traj = free_flow(SYS1, u0, TimeGrid(1.0, 16))
    for s in (0.0, 1.5, 3.0):
        n0 = hs_norm(u0, s)
        for i in range(traj.nslices):
            assert abs(hs_norm(traj.field(i), s) - n0) <= 1e-12 * n0


def test_free_flow_derivative_slices():
    ctx = ctx1(eps=0.5)
    coef = np.zeros((4,) + ctx.shape, dtype=complex)
    coef[0, 2] = 0.7
    u0 = SpectralField(ctx, coef)
    traj = free_flow(SYS1, u0, TimeGrid(0.6, 2))
    delta = 1e-3
    up = free_flow_field(SYS1, u0, 0.3 + delta)
    um = free_flow_field(SYS1, u0, 0.3 - delta)
    fd = (up.coef - um.coef) / (2 * delta)
    assert np.max(np.abs(fd - traj.dt_coef[1])) < 1e-4


def test_free_flow_concentrated_linf_uniform_in_eps():
    # dispersive spreading of a concentrated datum: sup-norm over a unit time
    # window stays a fixed multiple of |a|_{H^1}, uniformly in eps (ratio 1.264)
    ratios = []
    for eps in (1.0, 0.25, 0.0625, 0.015625):
        n = max(256, int(round(32 / eps)))
        n = 1 << (n - 1).bit_length()
        ctx = make_context(1, 2 * np.pi, n, eps)
        prof = DataProfile.gaussian(ctx, width=1.0)
        u0 = make_initial_datum(SYS1, prof, sigma=0.0)
        traj = free_flow(SYS1, u0, TimeGrid(1.0, 16))
        worst = max(linf_norm(traj.field(i)) for i in range(traj.nslices))
        ratios.append(worst / plain_hs_norm(prof.base, 1.0))
    assert max(ratios) <= 1.5
    assert max(ratios) / min(ratios) <= 2.0


# -- linearized solver ----------------------------------------------------------


def test_linearized_zero_data_zero_solution():
    ctx = ctx1()
    u_traj = free_flow(SYS1, pair(ctx, 3) * 0.1, TimeGrid(0.5, 8))
    h, info = solve_linearized(SYS1, u_traj, None, SpectralField.zero(ctx, 4))
    assert np.all(h.coef == 0)
    assert np.all(h.dt_coef == 0)
    assert info["residual_rel"] == 0.0


def test_linearized_matches_duhamel_on_free_problem():
    # u = 0: constant source is integrated by the exact per-mode quadrature
    ctx = ctx1()
    f2 = pair(ctx, 4, kmax=10)
    f1 = pair(ctx, 5, kmax=10)
    tg = TimeGrid(0.5, 8)
    uzero = TrajectoryField.zero(ctx, tg.times, 4)
    h, _ = solve_linearized(SYS1, uzero, const_traj(f1, tg.times), f2)
    ref = duhamel_solution(SYS1, f2, f1, tg)
    scale = max(hs_norm(ref.field(i), 0.0) for i in range(ref.nslices))
    for i in range(h.nslices):
        assert hs_norm(h.field(i) - ref.field(i), 0.0) <= 1e-12 * scale
    assert np.array_equal(h.coef[0], f2.coef)


def test_linearized_time_dependent_source():
    # smoothly modulated source against Gauss-Legendre quadrature of the
    # variation-of-constants formula; refine=8 lands around 5e-6 relative
    ctx = ctx1()
    F = pair(ctx, 11, kmax=3)
    f2 = pair(ctx, 12, kmax=3)
    tg = TimeGrid(0.5, 16)
    coef = np.array([np.cos(3 * t) * F.coef for t in tg.times])
    dtc = np.array([-3 * np.sin(3 * t) * F.coef for t in tg.times])
    f1traj = TrajectoryField(ctx, tg.times, coef, dtc)
    uzero = TrajectoryField.zero(ctx, tg.times, 4)
    h, info = solve_linearized(SYS1, uzero, f1traj, f2, refine=8)
    ref = duhamel_solution(SYS1, f2, None, tg, f1_callable=lambda t: F * np.cos(3 * t))
    diff = max(hs_norm(h.field(i) - ref.field(i), 0.0) for i in range(h.nslices))
    scale = max(hs_norm(ref.field(i), 0.0) for i in range(ref.nslices))
    assert diff <= 1e-4 * scale
    assert info["residual_rel"] <= 1e-4


def test_right_inverse_on_benchmark_trajectory():
    """Residual of dt h + P'(u) h = f1 below 1e-6 on a small-amplitude base."""
    ctx = ctx1(eps=0.25)
    base = pair(ctx, 4, kmax=4, decay=2.0)
    u0 = base * (0.2 / linf_norm(base))
    tg = TimeGrid(0.5, 32)
    u_traj = free_flow(SYS1, u0, tg)
    f2 = pair(ctx, 6)
    f1 = pair(ctx, 7)
    h, info = solve_linearized(SYS1, u_traj, const_traj(f1, tg.times), f2, refine=32)
    assert info["residual_rel"] <= 1e-6
    assert hs_norm(h.field(0) - f2, 0.0) <= 1e-12 * hs_norm(f2, 0.0)
    for i in range(h.nslices):
        assert conjugate_pair_residual(h.field(i)) <= 1e-12


def test_residual_decreases_under_refinement():
    ctx = ctx1(eps=0.25)
    base = pair(ctx, 4, kmax=4, decay=2.0)
    u0 = base * (0.2 / linf_norm(base))
    tg = TimeGrid(0.5, 16)
    u_traj = free_flow(SYS1, u0, tg)
    f2 = pair(ctx, 6)
    f1 = const_traj(pair(ctx, 7), tg.times)
    res = []
    for refine in (1, 2, 4):
        _, info = solve_linearized(SYS1, u_traj, f1, f2, refine=refine)
        res.append(info["residual_rel"])
    assert res[1] < 0.5 * res[0] and res[2] < 0.5 * res[1]


def test_auto_refine_reports_floor():
    ctx = ctx1(eps=0.25)
    base = pair(ctx, 4, kmax=4, decay=2.0)
    u0 = base * (0.2 / linf_norm(base))
    tg = TimeGrid(0.5, 8)
    u_traj = free_flow(SYS1, u0, tg)
    f2 = pair(ctx, 6)
    with pytest.warns(UserWarning, match="still above"):
        _, info = solve_linearized_auto(
            SYS1, u_traj, None, f2, residual_tol=1e-13, max_refine=2
        )
    assert info["converged"] is False and info["refine"] == 2


def test_linearized_divergence_guard():
    ctx = ctx1()
    tg = TimeGrid(0.5, 8)
    uzero = TrajectoryField.zero(ctx, tg.times, 4)
    huge = pair(ctx, 8) * 3e7
    with pytest.raises(Diverged) as exc:
        solve_linearized(SYS1, uzero, None, huge)
    assert exc.value.t == tg.times[1]


def test_residual_stencil_needs_enough_slices():
    ctx = ctx1()
    traj = free_flow(SYS1, pair(ctx, 9), TimeGrid(1.0, 2))
    with pytest.raises(ValueError):
        linearized_residual(SYS1, traj, traj, None)
    one = free_flow(SYS1, pair(ctx, 9), TimeGrid(1.0, 1))
    with pytest.raises(ValueError):
        solve_linearized(SYS1, one, None, pair(ctx, 9))


# -- nonlinear reference ---------------------------------------------------------


def test_reference_zero_datum_stays_zero():
    ctx = ctx1()
    traj, _ = reference_nonlinear_solve(
        SYS1, SpectralField.zero(ctx, 4), TimeGrid(0.5, 8), richardson=False
    )
    assert np.all(traj.coef == 0)


def test_reference_linear_regime_matches_free_flow():
    # amplitude 1e-5: the quadratic coupling acts at 1e-10, so the nonlinear
    # flow and the free flow agree to well below 1e-8 relative
    ctx = ctx1(eps=0.5)
    base = pair(ctx, 5, decay=1.0)
    tiny = base * (1e-5 / linf_norm(base))
    tg = TimeGrid(0.5, 32)
    traj, _ = reference_nonlinear_solve(SYS1, tiny, tg, richardson=False)
    ff = free_flow(SYS1, tiny, tg)
    diff = max(hs_norm(traj.field(i) - ff.field(i), 0.0) for i in range(traj.nslices))
    assert diff <= 1e-8 * hs_norm(tiny, 0.0)


def test_reference_fourth_order_self_convergence():
    # error against refine=8 drops ~16x per halving (measured 16.9)
    ctx = ctx1(eps=0.5)
    base = pair(ctx, 5, kmax=4, decay=2.0)
    amp = base * (0.5 / linf_norm(base))
    tg = TimeGrid(0.5, 32)
    ref, _ = reference_nonlinear_solve(SYS1, amp, tg, refine=8, richardson=False)
    t1, info1 = reference_nonlinear_solve(SYS1, amp, tg, refine=1)
    t2, _ = reference_nonlinear_solve(SYS1, amp, tg, refine=2, richardson=False)
    e1 = max(hs_norm(t1.field(i) - ref.field(i), 0.0) for i in range(t1.nslices))
    e2 = max(hs_norm(t2.field(i) - ref.field(i), 0.0) for i in range(t2.nslices))
    assert 8.0 <= e1 / e2 <= 32.0
    assert 0.3 * e1 / 15 <= info1["richardson_error"] <= 3.0 * e1 / 15
    assert max(conjugate_pair_residual(ref.field(i)) for i in range(ref.nslices)) <= 1e-12


def test_reference_near_conserves_sobolev_norm():
    # transparency at work: resonant self-interactions do not pump the H^s
    # norm; the log-growth over T=1/4 stays ~5e-4 for every eps
    for eps in (0.5, 0.25, 0.125):
        ctx = ctx1(eps=eps)
        b = pair(ctx, 7, kmax=4, decay=2.0)
        u0 = b * (0.4 / linf_norm(b))
        traj, _ = reference_nonlinear_solve(SYS1, u0, TimeGrid(0.25, 64), richardson=False)
        n0 = hs_norm(traj.field(0), 2.0)
        growth = max(
            abs(np.log(hs_norm(traj.field(i), 2.0) / n0)) for i in range(traj.nslices)
        )
        assert growth <= 5e-3
