"""Norms, smoothings, dyadic blocks, rescaling: the Fourier calculus layer."""

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from semiflow.spectral import (
    NormTag,
    SpectralField,
    block_count,
    block_weight_bound,
    conjugate_pair_residual,
    derivative,
    dyadic_block,
    hs_norm,
    linf_norm,
    load_field,
    make_conjugate_pair,
    make_context,
    norm,
    plain_hs_norm,
    random_band_limited,
    rescale,
    save_field,
    smooth,
    smoothing_weight_bound,
    tail_weight_bound,
    w_norm,
)
from semiflow.systems import concentrate

S_GRID = (0.0, 1.0, 2.0, 4.0, 6.0)
EPS_GRID = (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625)


def rand(ctx, ncomp=2, seed=0, kmax=None, decay=1.0):
    rng = np.random.default_rng(seed)
    if kmax is None:
        kmax = ctx.n // 2 - 1
    return random_band_limited(ctx, ncomp, kmax, rng, decay=decay)


def test_zero_field_every_tag_zero():
    ctx = make_context(1, 2 * np.pi, 64, 0.5)
    z = SpectralField.zero(ctx, 2)
    for tag in (NormTag("L2"), NormTag("Hs_eps", s=3.0), NormTag("Linf"), NormTag("Wm_inf_eps", m=2)):
        assert norm(z, tag) == 0.0


def test_single_mode_hs_eps_norm():
    # u = e^{i4x} on [0, 2pi), eps = 1/4, s = 2:
    # weight (1 + (eps*4)^2)^{s/2} = 2, L2 norm sqrt(2pi)
    ctx = make_context(1, 2 * np.pi, 64, 0.25)
    x = ctx.x_grids()[0]
    u = SpectralField.from_grid(ctx, np.exp(4j * x))
    expected = 2.0 * np.sqrt(2.0 * np.pi)  # = 5.013256549262001
    assert abs(hs_norm(u, 2.0) - expected) < 1e-12 * expected


def test_hs_zero_is_l2():
    ctx = make_context(2, 2 * np.pi, 32, 0.5)
    u = rand(ctx, ncomp=3, seed=1)
    assert hs_norm(u, 0.0) == norm(u, NormTag("L2"))


def test_parseval_matches_box_integral():
    # coefficient normalization is pinned to the continuum L2(box) integral
    for d, n in ((1, 128), (2, 32)):
        ctx = make_context(d, 2 * np.pi, n, 0.5)
        u = rand(ctx, ncomp=2, seed=2)
        g = u.grid()
        quad = np.sqrt(np.sum(np.abs(g) ** 2) * ctx.dx**d)
        assert abs(quad - hs_norm(u, 0.0)) < 1e-12 * quad


def test_norm_rejects_nonfinite():
    ctx = make_context(1, 2 * np.pi, 32, 0.5)
    u = SpectralField.zero(ctx, 1)
    u.coef[0, 3] = np.nan
    with pytest.raises(ValueError):
        norm(u, NormTag("L2"))


def test_norm_tag_validation():
    with pytest.raises(ValueError):
        NormTag("Wm_inf_eps", m=-1)
    with pytest.raises(ValueError):
        NormTag("Hs_eps")
    with pytest.raises(ValueError):
        NormTag("H2")


def test_w_norm_single_mode():
    # e^{i4x}, eps=1/4, m=2: 1 + eps*4 + eps^2*16 = 3
    ctx = make_context(1, 2 * np.pi, 64, 0.25)
    u = SpectralField.from_grid(ctx, np.exp(4j * ctx.x_grids()[0]))
    assert abs(w_norm(u, 2) - 3.0) < 1e-12
    assert abs(linf_norm(u) - 1.0) < 1e-12


def test_concentration_norm_identity():
    # ||T_eps a||_{H^s_eps} = eps^{d/2} ||a||_{H^s} for resolved profiles
    L, n, eps = 64.0, 1024, 0.25
    ctx = make_context(1, L, n, eps)
    x = ctx.x_grids()[0]
    a = SpectralField.from_grid(ctx, np.exp(-(x**2)))
    lhs = hs_norm(concentrate(a, eps), 2.0)
    unit = make_context(1, L, n, 1.0)
    rhs = eps**0.5 * hs_norm(SpectralField(unit, a.coef), 2.0)
    assert abs(lhs - rhs) < 1e-9 * rhs


# -- smoothing family -------------------------------------------------------


def test_smooth_identity_inside_band():
    ctx = make_context(1, 2 * np.pi, 64, 0.5)
    u = rand(ctx, kmax=3, seed=3)  # eps|xi| <= 1.5 < 2
    s1 = smooth(u, 1)
    assert np.array_equal(s1.coef, u.coef)


def one_mode(ctx, m):
    coef = np.zeros((1,) + ctx.shape, dtype=complex)
    coef[(0,) + (m % ctx.n,) * ctx.d] = 1.0
    return SpectralField(ctx, coef)


def test_smooth_sharp_cutoff_kills_single_mode():
    ctx = make_context(1, 2 * np.pi, 64, 0.5)
    u = one_mode(ctx, 8)
    assert hs_norm(smooth(u, 1), 0.0) == 0.0  # eps|xi| = 4 > 2


def test_s1_contraction_exact():
    ctx = make_context(1, 2 * np.pi, 128, 0.25)
    u = rand(ctx, seed=4)
    for j in range(6):
        for s in S_GRID:
            assert hs_norm(smooth(u, j), s) <= hs_norm(u, s) * (1 + 1e-15)


def test_s0_norm_monotone_in_s():
    ctx = make_context(1, 2 * np.pi, 128, 0.25)
    u = rand(ctx, seed=5)
    vals = [hs_norm(u, s) for s in S_GRID]
    assert all(a <= b * (1 + 1e-15) for a, b in zip(vals, vals[1:]))


def test_block_telescoping_and_disjointness():
    ctx = make_context(1, 2 * np.pi, 256, 0.125)
    u = rand(ctx, seed=6)
    jmax = block_count(ctx)
    acc = dyadic_block(u, 0)
    for j in range(1, jmax):
        acc = acc + dyadic_block(u, j)
    # R_0 + ... + R_{J-1} telescopes to S_J
    assert np.allclose(acc.coef, smooth(u, jmax).coef, rtol=0, atol=1e-15)
    assert np.array_equal(smooth(u, jmax).coef, u.coef)

    mode = one_mode(ctx, 40)
    hits = [j for j in range(jmax) if hs_norm(dyadic_block(mode, j), 0.0) > 0]
    assert len(hits) == 1


def test_block_orthogonality_equality():
    # sharp cutoffs: sum_j ||R_j u||^2 equals ||u||^2 exactly, not just <=
    rng = np.random.default_rng(7)
    ctx = make_context(1, 2 * np.pi, 256, 0.125)
    for trial in range(100):
        u = random_band_limited(ctx, 2, ctx.n // 2 - 1, rng, decay=0.5)
        for s in (0.0, 2.0, 6.0):
            total = sum(hs_norm(dyadic_block(u, j), s) ** 2 for j in range(block_count(ctx)))
            ref = hs_norm(u, s) ** 2
            assert abs(total - ref) < 1e-12 * ref


def test_s2_s3_sharp_lattice_constants():
    rng = np.random.default_rng(8)
    for eps in EPS_GRID:
        ctx = make_context(1, 2 * np.pi, 256, eps)
        u = random_band_limited(ctx, 1, ctx.n // 2 - 1, rng, decay=0.3)
        for j in (0, 1, 2, 3):
            for a in (0.0, 1.0, 2.0):
                for b in (4.0, 6.0):
                    cj = smoothing_weight_bound(ctx, j, a, b)
                    # analytic sharp value when a lattice point sits at the cutoff
                    assert cj <= 2 ** (j * (b - a)) * (1 + 2.0 ** (-2 * j)) ** ((b - a) / 2) + 1e-9
                    lhs = hs_norm(smooth(u, j), b)
                    assert lhs <= cj * hs_norm(smooth(u, j), a) * (1 + 1e-12)
                    # tail decays: b and a swap roles
                    ct = tail_weight_bound(ctx, j, b, a)
                    tail = u - smooth(u, j)
                    assert hs_norm(tail, a) <= ct * hs_norm(tail, b) * (1 + 1e-12)
                    assert ct <= 2.0 ** (-j * (b - a)) + 1e-12


def test_smoothing_constant_eps_variation_under_5pct():
    # cutoff surfaces eps|xi| = 2^j align across dyadic eps, so the sharp
    # constants barely move once the lattice reaches the cutoff (mode 2^j/eps)
    for j in (1, 2, 3):
        for a, b in ((0.0, 2.0), (1.0, 4.0), (2.0, 6.0)):
            vals = []
            for eps in EPS_GRID:
                n = 64
                while n / 2 <= 2**j / eps:
                    n *= 2
                vals.append(smoothing_weight_bound(make_context(1, 2 * np.pi, n, eps), j, a, b))
            assert max(vals) / min(vals) < 1.05


def test_block_weight_bound_sharp():
    # the annulus tops out at eps|xi| = 2^{j+1}; with the inhomogeneous weight
    # the attainable ratio for b > a is 2^{j(b-a)} 2^{b-a} (1+2^{-2(j+1)})^{(b-a)/2},
    # slightly above the homogeneous-weight count 2^{j(b-a)} 2^{|b-a|}
    rng = np.random.default_rng(9)
    ctx = make_context(1, 2 * np.pi, 256, 0.25)
    u = random_band_limited(ctx, 1, ctx.n // 2 - 1, rng, decay=0.2)
    for j in range(block_count(ctx)):
        r = dyadic_block(u, j)
        if hs_norm(r, 0.0) == 0.0:
            continue
        for a, b in ((0.0, 2.0), (2.0, 0.0), (1.0, 4.0), (6.0, 2.0)):
            cj = block_weight_bound(ctx, j, a, b)
            assert hs_norm(r, b) <= cj * hs_norm(r, a) * (1 + 1e-12)
            if b > a:
                sharp = 2.0 ** (j * (b - a)) * 2.0 ** (b - a) * (
                    1 + 2.0 ** (-2 * (j + 1))
                ) ** ((b - a) / 2)
            else:
                # decreasing weight: extremal at the annulus bottom
                sharp = 2.0 ** (j * (b - a)) * 2.0 ** abs(b - a)
            assert cj <= sharp * (1 + 1e-12)


def test_sharp_cutoff_equality():
    # with L = 2pi and eps = 1/4, the lattice point xi = 2^j/eps sits exactly
    # on the cutoff, so the weight-ratio bound is attained
    ctx = make_context(1, 2 * np.pi, 256, 0.25)
    for j in (1, 2, 3):
        for a, b in ((0.0, 2.0), (1.0, 6.0)):
            sharp = (1 + 4.0**j) ** ((b - a) / 2)
            assert abs(smoothing_weight_bound(ctx, j, a, b) - sharp) < 1e-12 * sharp


# -- rescaling ---------------------------------------------------------------


def test_rescale_norm_identity():
    ctx = make_context(1, 2 * np.pi, 128, 0.125)
    u = rand(ctx, seed=10)
    v = rescale(u, "to_unit")
    for s in S_GRID:
        lhs = hs_norm(u, s)
        rhs = ctx.eps**0.5 * hs_norm(v, s)
        assert abs(lhs - rhs) < 1e-12 * max(lhs, 1e-30)
    back = rescale(v, "from_unit", eps=ctx.eps)
    assert np.allclose(back.coef, u.coef, rtol=1e-14, atol=1e-16)
    assert back.ctx.compatible(ctx)


def test_rescale_eps_one_is_identity():
    ctx = make_context(1, 4.0, 64, 1.0)
    u = rand(ctx, seed=11)
    v = rescale(u, "to_unit")
    assert np.array_equal(v.coef, u.coef)
    assert v.ctx.L == ctx.L


def test_rescale_derivative_commutation():
    # d^alpha (u(eps x)) = eps^{|alpha|} (d^alpha u)(eps x)
    ctx = make_context(2, 2 * np.pi, 32, 0.25)
    u = rand(ctx, ncomp=1, seed=12, kmax=10)
    for alpha in ((1, 0), (0, 1), (2, 1)):
        lhs = derivative(rescale(u, "to_unit"), alpha)
        rhs = rescale(derivative(u, alpha), "to_unit") * ctx.eps ** sum(alpha)
        num = float(np.max(np.abs(lhs.coef - rhs.coef)))
        assert num <= 1e-12 * max(float(np.max(np.abs(rhs.coef))), 1e-30)


def test_rescale_bad_direction_and_missing_eps():
    ctx = make_context(1, 2 * np.pi, 32, 0.5)
    u = rand(ctx, seed=13)
    with pytest.raises(ValueError):
        rescale(u, "sideways")
    with pytest.raises(ValueError):
        rescale(rescale(u, "to_unit"), "from_unit")
    with pytest.raises(ValueError):
        rescale(u, "from_unit", eps=0.5)  # not a unit-scale context


# -- conjugate-pair structure ------------------------------------------------


def test_conjugate_pair_roundtrip_and_invariance():
    ctx = make_context(1, 2 * np.pi, 128, 0.25)
    v = rand(ctx, ncomp=2, seed=14)
    u = make_conjugate_pair(v)
    assert conjugate_pair_residual(u) < 1e-15
    g = u.grid()
    assert np.allclose(g[2:], np.conj(g[:2]), atol=1e-13)
    # multiplier operations preserve the pair structure
    assert conjugate_pair_residual(smooth(u, 2)) < 1e-15
    assert conjugate_pair_residual(dyadic_block(u, 1)) < 1e-15


def test_plain_vs_eps_weights():
    ctx = make_context(1, 2 * np.pi, 64, 0.25)
    u = rand(ctx, seed=15)
    # eps weights are weaker: (1+|eps xi|^2) <= (1+|xi|^2) for eps <= 1
    for s in (1.0, 2.0, 4.0):
        assert hs_norm(u, s) <= plain_hs_norm(u, s) * (1 + 1e-15)
    unit = make_context(1, 2 * np.pi, 64, 1.0)
    w = SpectralField(unit, u.coef)
    assert abs(hs_norm(w, 3.0) - plain_hs_norm(w, 3.0)) < 1e-15 * hs_norm(w, 3.0)


def test_save_load_roundtrip(tmp_path):
    ctx = make_context(2, 4.0, 16, 0.5)
    u = rand(ctx, ncomp=4, seed=16)
    path = tmp_path / "field.npz"
    save_field(u, path)
    v = load_field(path)
    assert np.array_equal(v.coef, u.coef)
    assert v.ctx.compatible(ctx) and v.ctx.eps == ctx.eps

    import json

    import numpy as np_

    bad = tmp_path / "bad.npz"
    np_.savez(bad, header=json.dumps({"format": "sfld-0"}), coef=u.coef)
    with pytest.raises(ValueError):
        load_field(bad)


def test_context_validation():
    with pytest.raises(ValueError):
        make_context(1, 2 * np.pi, 100, 0.5)  # n not a power of two
    with pytest.raises(ValueError):
        make_context(1, 2 * np.pi, 64, 0.3)  # eps not dyadic
    with pytest.raises(ValueError):
        make_context(3, 2 * np.pi, 64, 0.5)  # d out of range
    with pytest.raises(ValueError):
        make_context(1, -1.0, 64, 0.5)


@given(
    s=st.sampled_from(S_GRID),
    j=st.integers(min_value=0, max_value=5),
    seed=st.integers(min_value=0, max_value=2**31),
)
@settings(max_examples=60, deadline=None)
def test_property_smoothing_never_grows(s, j, seed):
    ctx = make_context(1, 2 * np.pi, 64, 0.25)
    u = rand(ctx, seed=seed)
    assert hs_norm(smooth(u, j), s) <= hs_norm(u, s) * (1 + 1e-14)


@given(seed=st.integers(min_value=0, max_value=2**31))
@settings(max_examples=40, deadline=None)
def test_property_parseval(seed):
    ctx = make_context(1, 2 * np.pi, 64, 0.5)
    u = rand(ctx, seed=seed)
    g = u.grid()
    quad = np.sqrt(np.sum(np.abs(g) ** 2) * ctx.dx)
    assert abs(quad - hs_norm(u, 0.0)) <= 1e-11 * max(quad, 1e-30)
