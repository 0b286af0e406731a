"""Generic iteration engine: config chains, radius bookkeeping, toy solves."""

import json
import math

import numpy as np
import pytest

from semiflow.nashmoser import (
    BallEscape,
    BanachScalePair,
    DataSizeError,
    NmhConfig,
    NmhProblem,
    NoConvergence,
    compute_delta,
    data_condition,
    higher_regularity_audit,
    nmh_solve,
    optimize_radius,
    validate_config,
)

# -- config validation -----------------------------------------------------------


def cfg_kw(**over):
    kw = dict(a0=0.0, mu=2.0, a1=2.0, a2=8.0, alpha=4.5, beta=4.5)
    kw.update(over)
    return kw


def test_config_chain_accepts_reference_indices():
    # a1 + beta/2 = 4.25 < 4.5 = alpha < 6.5 = a1 + beta, 2 alpha = 9 < 10
    report = validate_config(NmhConfig(**cfg_kw()))
    assert report.ok and report.failures == []


def test_config_rejects_alpha_at_upper_boundary():
    kw = cfg_kw(beta=3.0, alpha=5.0)  # alpha = a1 + beta exactly
    report = validate_config(NmhConfig(strict=False, **kw))
    assert "alpha < a1 + beta" in report.failures
    with pytest.raises(ValueError, match="alpha < a1 \\+ beta"):
        NmhConfig(**kw)


def test_config_rejects_unordered_indices():
    report = validate_config(NmhConfig(strict=False, **cfg_kw(a0=3.0)))
    assert "a0 <= mu" in report.failures
    report = validate_config(NmhConfig(strict=False, **cfg_kw(delta1=0.0)))
    assert "delta1 > 0" in report.failures


def test_config_accepts_low_index_preset():
    # mu = a1 = 2 with beta = alpha > 4
    cfg = NmhConfig(**cfg_kw(alpha=4.2, beta=4.2, a2=7.0))
    assert validate_config(cfg).ok
    assert cfg.theta(3) == 8.0


# -- delta and radius bookkeeping --------------------------------------------------


def test_compute_delta_reference_values():
    cfg = NmhConfig(
        **cfg_kw(),
        M1=lambda a: 1.0,
        L1=lambda a: 1.0,
        L2=lambda a: 1.0,
    )
    rep = compute_delta(cfg, A=0.0)
    assert rep.branches == {"ball": 1.0, "linear": 1.0, "quadratic": 2.0}
    assert rep.dominant == "quadratic"
    assert rep.B == 4.0 and rep.delta == 0.25


def test_compute_delta_large_ball_never_dominates():
    cfg = NmhConfig(**cfg_kw(delta1=1e12), L1=lambda a: 1.0, M1=lambda a: 1.0)
    assert compute_delta(cfg, A=3.0).dominant != "ball"
    with pytest.raises(ValueError):
        compute_delta(cfg, A=-1.0)


def test_delta_branches_share_scaling_exponent():
    # power tables M ~ eps^q, L ~ eps^{-q}: each branch radius 1/(L*branch)
    # scales as eps^q, so the three fitted slopes coincide
    q = 1.5
    eps_list = [2.0**-k for k in range(1, 7)]
    radii = {"ball": [], "linear": [], "quadratic": []}
    for eps in eps_list:
        cfg = NmhConfig(
            **cfg_kw(),
            M1=lambda a, e=eps: 2.0 * e**q,
            M2=lambda a, e=eps: 2.0 * e**q,
            L1=lambda a, e=eps: 3.0 * e**-q,
            L2=lambda a, e=eps: 3.0 * e**-q,
        )
        rep = compute_delta(cfg, A=1.0)
        for name, val in rep.branches.items():
            radii[name].append(1.0 / (cfg.l123(cfg.a2) * val))
    logs = np.log(np.asarray(eps_list))
    slopes = [np.polyfit(logs, np.log(radii[name]), 1)[0] for name in radii]
    assert max(slopes) - min(slopes) < 0.05
    assert abs(slopes[1] - q) < 1e-9  # linear branch carries the pure power


def test_optimize_radius_interior_minimum():
    rep = optimize_radius(A=1.0, B=1.5, C=0.5, R=10.0, p=2.0)
    assert abs(rep.r_star - math.sqrt(0.5)) < 1e-12
    assert abs(rep.delta_star - 1.0 / (2.0 * math.sqrt(2.0))) < 1e-12
    assert rep.lam_star == 1.0 / rep.r_star
    assert not rep.constrained


def test_optimize_radius_against_grid_scan():
    A, B, C, R, p = 0.7, 0.9, 0.4, 3.0, 2.5
    rep = optimize_radius(A, B, C, R, p)
    r = np.linspace(R / 1e6, R, 10**6)
    phi = A / r + (B + C) * r ** (p - 1)
    i = int(np.argmin(phi))
    assert abs(rep.delta_star - 1.0 / phi[i]) <= 1e-6 * rep.delta_star
    assert abs(rep.r_star - r[i]) <= 1e-4


def test_optimize_radius_branches():
    flat = optimize_radius(A=1.0, B=1.0, C=1.0, R=5.0, p=1.0)
    assert flat.r_star == 5.0 and flat.r0 is None and flat.constrained
    assert flat.delta_star == 1.0 / (1.0 / 5.0 + 2.0)
    r0 = optimize_radius(1.0, 1.5, 0.5, 10.0, 2.0).r0
    clipped = optimize_radius(1.0, 1.5, 0.5, r0 / 2, 2.0)
    assert clipped.constrained and clipped.r_star == r0 / 2
    with pytest.raises(ValueError):
        optimize_radius(1.0, 1.0, 1.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        optimize_radius(-1.0, 1.0, 1.0, 1.0, 2.0)


# -- toy problem on a sequence scale ----------------------------------------------

K = 33
KS = np.arange(K)
GAMMA = 0.3


def toy_scale():
    def norm(x, a):
        return float(np.sqrt(np.sum((1.0 + KS**2) ** a * np.abs(x) ** 2)))

    def smooth(x, j):
        out = x.copy()
        out[KS > 2.0**j] = 0.0
        return out

    def block(x, j):
        if j == 0:
            return smooth(x, 1)
        return smooth(x, j + 1) - smooth(x, j)

    return BanachScalePair(norm, norm, smooth, smooth, block, block_count=6)


def toy_problem():
    # diagonal quadratic map: Phi(u)_k = u_k + gamma u_k^2, exact right inverse
    def phi(u):
        return u + GAMMA * u * u

    def psi(v, f):
        return f / (1.0 + 2.0 * GAMMA * v), {"exact": True}

    def zero():
        return np.zeros(K)

    def qf(v):
        nz = np.nonzero(np.abs(v) > 1e-14)[0]
        return float(nz.max()) if nz.size else 0.0

    return NmhProblem(phi, psi, zero, query_frequency=qf)


def toy_cfg(**over):
    kw = cfg_kw(
        M1=lambda a: 0.3,
        L1=lambda a: 1.0,
        L2=lambda a: 1.0,
    )
    kw.update(over)
    return NmhConfig(**kw)


def toy_datum(amp=0.1):
    return amp * (1.0 + KS.astype(float) ** 2) ** -3.5


def test_data_condition_sharp_blocks_give_unit_constant():
    scale = toy_scale()
    g = toy_datum()
    assert abs(data_condition(scale, g, 4.5) - 1.0) <= 1e-12
    assert data_condition(scale, np.zeros(K), 4.5) == 0.0


def test_solve_zero_datum_is_trivial():
    u, result = nmh_solve(toy_problem(), toy_scale(), toy_cfg(), np.zeros(K))
    assert np.all(u == 0)
    assert result["iterations"] == 1 and result["converged"]


def test_solve_matches_closed_form():
    """End-to-end smoothed Newton against the per-coordinate exact root."""
    scale = toy_scale()
    g = toy_datum()
    u, result = nmh_solve(toy_problem(), scale, toy_cfg(), g)
    exact = (-1.0 + np.sqrt(1.0 + 4.0 * GAMMA * g)) / (2.0 * GAMMA)
    assert np.max(np.abs(u - exact)) <= 1e-8 * np.max(np.abs(exact))
    assert result["final_residual"] <= 1e-8 * result["gnorm_beta"]
    assert abs(result["A"] - 1.0) <= 1e-12
    assert result["bound_ratio"] <= 1.0

    res = result["trace"].residuals()
    assert all(b < a for a, b in zip(res[1:], res[2:]))  # decreasing once started
    for step in result["trace"]:
        if step.query_freq is not None:
            assert step.query_freq <= step.theta  # queries only at smoothed points


def test_dyadic_variant_reaches_same_solution():
    scale = toy_scale()
    g = toy_datum()
    u_newton, _ = nmh_solve(toy_problem(), scale, toy_cfg(), g)
    u_dyadic, result = nmh_solve(toy_problem(), scale, toy_cfg(), g, variant="dyadic")
    assert np.max(np.abs(u_newton - u_dyadic)) <= 1e-6
    assert result["iterations"] >= scale.block_count
    with pytest.raises(ValueError):
        nmh_solve(toy_problem(), scale, toy_cfg(), g, variant="chord")


def test_oversized_datum_rejected_unless_forced():
    scale = toy_scale()
    g = toy_datum(amp=0.5)  # ||g||_beta ~ 0.53 > delta = 0.25
    with pytest.raises(DataSizeError):
        nmh_solve(toy_problem(), scale, toy_cfg(), g)
    u, result = nmh_solve(toy_problem(), scale, toy_cfg(), g, force=True)
    assert result["converged"]


def test_ball_escape_carries_trace():
    scale = toy_scale()
    g = toy_datum()
    cfg = toy_cfg(delta1=1e-6)
    with pytest.raises(BallEscape) as exc:
        nmh_solve(toy_problem(), scale, cfg, g, force=True)
    assert len(exc.value.trace) >= 2
    assert not exc.value.trace.steps[-1].ball_ok


def test_stagnation_raises_no_convergence():
    scale = toy_scale()
    g = toy_datum()
    frozen = NmhProblem(
        phi=lambda u: u + GAMMA * u * u,
        psi=lambda v, f: (np.zeros(K), {}),
        zero=lambda: np.zeros(K),
    )
    with pytest.raises(NoConvergence) as exc:
        nmh_solve(frozen, scale, toy_cfg(max_iter=12), g)
    assert len(exc.value.trace) >= 7


def test_trace_exports_json_lines():
    _, result = nmh_solve(toy_problem(), toy_scale(), toy_cfg(), toy_datum())
    lines = result["trace"].to_jsonl().splitlines()
    assert len(lines) == result["iterations"]
    first = json.loads(lines[0])
    assert first["n"] == 0 and first["theta"] == 1.0
    assert {"res_a1", "res_beta", "e_alpha", "ball_ok"} <= set(first)


def test_higher_regularity_audit_reports_ratio():
    scale = toy_scale()
    g = toy_datum()
    report = higher_regularity_audit(toy_problem(), scale, toy_cfg(), g, c=1.0)
    assert report["c"] == 1.0
    assert report["g_beta_plus_c"] == scale.f_norm(g, 5.5)
    assert report["ratio"] > 0 and math.isfinite(report["ratio"])
    assert abs(report["A_c"] - 1.0) <= 1e-12
