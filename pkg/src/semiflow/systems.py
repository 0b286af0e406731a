"""Coupled semiclassical Schrodinger systems in real (doubled) form.

The model is a system of N coupled equations for v in C^N,

    dt v_j + i lambda_j Lap v_j = sum_k ( b_jk(v, dx) v_k + c_jk(v, dx) conj(v_k) ),

with first-order operators b_jk(v, dx) = sum_l b_ljk(v) d_l (same for c) whose
coefficients vanish to order p at v = 0.  Stacking u = (v, conj v) in C^{2N}
gives the doubled form

    dt u + i eps^{-2} A(eps dx) u = eps^{-1} B(u, eps dx) u,

where A(eps dx) = -|eps xi|^2 diag(lambda, -lambda) as a Fourier multiplier and
B carries the block structure [[b, c], [conj c, conj b]].  Coefficients are
polynomials in (v, conj v) treated as independent variables, so the doubled
form is polynomial in u and has exact first and second derivatives.

The structural conditions on the model ("transparency"): real pairwise
distinct lambda_j, symmetric c_jk = c_kj on resonant pairs lambda_j+lambda_k=0,
and real-valued diagonal coefficients b_jj.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .spectral import (
    LatticeOverflow,
    SemiclassicalContext,
    SpectralField,
    hs_norm,
    linf_norm,
    make_conjugate_pair,
)

__all__ = [
    "Polynomial",
    "SystemSpec",
    "TransparencyReport",
    "TransparencyError",
    "AmplitudeError",
    "DataProfile",
    "transparency_check",
    "benchmark_system",
    "coefficient_tables",
    "coefficient_tables_d1",
    "coefficient_tables_d2",
    "apply_A",
    "apply_B",
    "apply_B_from_tables",
    "apply_P",
    "apply_P_prime",
    "apply_P_second",
    "apply_R0",
    "lambda_doubled",
    "omega_vector",
    "make_initial_datum",
    "concentrate",
    "oscillate",
    "profile_scaling_exponent",
    "system_to_dict",
    "system_from_dict",
    "load_system",
]


MAX_AMPLITUDE = 1.0  # fixed L-infinity ball on which the model is used


class TransparencyError(ValueError):
    """Raised when a system violating the structural conditions is loaded."""


class AmplitudeError(ValueError):
    """Raised when a field leaves the fixed amplitude ball of the model."""


class Polynomial:
    """Polynomial in (v_1..v_N, vbar_1..vbar_N) as independent variables.

    Monomials are keyed by a pair of exponent tuples (e, f) meaning
    prod v_m^{e_m} * prod vbar_m^{f_m}.  On conjugate-pair data vbar_m is the
    complex conjugate of v_m; off that manifold the two are independent, which
    is exactly what the doubled-form derivatives require.
    """

    def __init__(self, nvars: int, terms: dict | None = None):
        self.nvars = nvars
        self.terms = {}
        if terms:
            for (e, f), coeff in terms.items():
                if len(e) != nvars or len(f) != nvars:
                    raise ValueError("exponent tuples must have length nvars")
                if coeff != 0:
                    self.terms[(tuple(e), tuple(f))] = complex(coeff)

    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars, {})

    def is_zero(self) -> bool:
        return not self.terms

    def min_degree(self) -> int:
        if not self.terms:
            return 0
        return min(sum(e) + sum(f) for (e, f) in self.terms)

    def evaluate(self, v: np.ndarray, vbar: np.ndarray) -> np.ndarray:
        """Evaluate on grids; v, vbar have shape (N, ...)."""
        out = np.zeros(v.shape[1:], dtype=complex)
        for (e, f), coeff in self.terms.items():
            term = np.full(v.shape[1:], coeff, dtype=complex)
            for m, em in enumerate(e):
                if em:
                    term = term * v[m] ** em
            for m, fm in enumerate(f):
                if fm:
                    term = term * vbar[m] ** fm
            out += term
        return out

    def deriv(self, m: int, barred: bool) -> "Polynomial":
        out = {}
        for (e, f), coeff in self.terms.items():
            exps = f if barred else e
            if exps[m] == 0:
                continue
            new = list(exps)
            new[m] -= 1
            key = (e, tuple(new)) if barred else (tuple(new), f)
            out[key] = out.get(key, 0.0) + coeff * exps[m]
        return Polynomial(self.nvars, out)

    def conjugated(self) -> "Polynomial":
        """The polynomial representing the complex conjugate function."""
        out = {}
        for (e, f), coeff in self.terms.items():
            out[(f, e)] = out.get((f, e), 0.0) + np.conj(coeff)
        return Polynomial(self.nvars, out)

    def __mul__(self, other: "Polynomial") -> "Polynomial":
        out = {}
        for (e1, f1), c1 in self.terms.items():
            for (e2, f2), c2 in other.terms.items():
                key = (
                    tuple(a + b for a, b in zip(e1, e2)),
                    tuple(a + b for a, b in zip(f1, f2)),
                )
                out[key] = out.get(key, 0.0) + c1 * c2
        return Polynomial(self.nvars, out)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        out = dict(self.terms)
        for key, c in other.terms.items():
            out[key] = out.get(key, 0.0) + c
        return Polynomial(self.nvars, out)

    def scaled(self, a: complex) -> "Polynomial":
        return Polynomial(self.nvars, {k: a * c for k, c in self.terms.items()})

    def to_jsonable(self) -> list:
        return [
            {"coeff": [c.real, c.imag], "v": list(e), "vbar": list(f)}
            for (e, f), c in sorted(self.terms.items())
        ]

    @classmethod
    def from_jsonable(cls, nvars: int, data: list) -> "Polynomial":
        terms = {}
        for mono in data:
            key = (tuple(mono["v"]), tuple(mono["vbar"]))
            terms[key] = complex(mono["coeff"][0], mono["coeff"][1])
        return cls(nvars, terms)


def _mono(nvars: int, coeff: complex = 1.0, v: dict | None = None, vbar: dict | None = None):
    e = [0] * nvars
    f = [0] * nvars
    for m, a in (v or {}).items():
        e[m] = a
    for m, a in (vbar or {}).items():
        f[m] = a
    return Polynomial(nvars, {(tuple(e), tuple(f)): coeff})


@dataclass
class SystemSpec:
    """System data: dimension, component count, speeds, order and coefficients.

    b and c map (l, j, k) with l < d and j, k < N to Polynomial coefficient
    functions; missing keys mean zero.
    """

    d: int
    N: int
    lambdas: tuple
    p: int
    b: dict = dc_field(default_factory=dict)
    c: dict = dc_field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self):
        self.lambdas = tuple(float(l) for l in self.lambdas)
        if len(self.lambdas) != self.N:
            raise ValueError("need one lambda per component")
        if self.p < 1:
            raise ValueError("coefficient vanishing order p must be >= 1")
        for table in (self.b, self.c):
            for (l, j, k), poly in table.items():
                if not (0 <= l < self.d and 0 <= j < self.N and 0 <= k < self.N):
                    raise ValueError(f"coefficient index out of range: {(l, j, k)}")
                if not poly.is_zero() and poly.min_degree() < self.p:
                    raise ValueError(
                        f"coefficient {(l, j, k)} has degree {poly.min_degree()} < p={self.p}"
                    )

    def poly(self, table: str, l: int, j: int, k: int) -> Polynomial:
        src = self.b if table == "b" else self.c
        return src.get((l, j, k), Polynomial.zero(self.N))

    def resonant_pairs(self) -> set:
        """(j, k) with lambda_j + lambda_k = 0 (the resonant index set)."""
        out = set()
        for j in range(self.N):
            for k in range(self.N):
                if abs(self.lambdas[j] + self.lambdas[k]) < 1e-12:
                    out.add((j, k))
        return out


def lambda_doubled(sys: SystemSpec) -> np.ndarray:
    """Speeds of the doubled form: (lambda_1..lambda_N, -lambda_1..-lambda_N)."""
    lam = np.asarray(sys.lambdas, dtype=float)
    return np.concatenate([lam, -lam])


def omega_vector(sys: SystemSpec) -> np.ndarray:
    """Phase speeds omega_j entering the symbol denominators: omega = -lambda'."""
    return -lambda_doubled(sys)


@dataclass
class TransparencyReport:
    ok: bool
    violations: list
    max_deviation: float


def transparency_check(sys: SystemSpec, nsamples: int = 64, seed: int = 0) -> TransparencyReport:
    """Sample the structural conditions on a point cloud in the unit ball."""
    violations = []
    worst = 0.0

    lam = np.asarray(sys.lambdas)
    if np.any(np.abs(np.imag(lam)) > 0):
        violations.append("speeds must be real")
    for j in range(sys.N):
        for k in range(j + 1, sys.N):
            if abs(lam[j] - lam[k]) < 1e-12:
                violations.append(f"speeds {j} and {k} coincide")

    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((sys.N, nsamples)) + 1j * rng.standard_normal((sys.N, nsamples))
    pts *= rng.uniform(0, 1, nsamples) / np.maximum(np.linalg.norm(pts, axis=0), 1e-30)
    v, vb = pts, np.conj(pts)

    for l in range(sys.d):
        for j in range(sys.N):
            vals = sys.poly("b", l, j, j).evaluate(v, vb)
            dev = float(np.max(np.abs(np.imag(vals)), initial=0.0))
            worst = max(worst, dev)
            if dev > 1e-10:
                violations.append(f"b[{l},{j},{j}] is not real-valued (dev {dev:.2e})")

    for (j, k) in sys.resonant_pairs():
        for l in range(sys.d):
            diff = sys.poly("c", l, j, k).evaluate(v, vb) - sys.poly("c", l, k, j).evaluate(v, vb)
            dev = float(np.max(np.abs(diff), initial=0.0))
            worst = max(worst, dev)
            if dev > 1e-10:
                violations.append(f"c[{l},{j},{k}] != c[{l},{k},{j}] on resonant pair (dev {dev:.2e})")

    return TransparencyReport(ok=not violations, violations=violations, max_deviation=worst)


def benchmark_system(d: int, p: int = 2, N: int = 2) -> SystemSpec:
    """Standard test system: N=2, lambda=(1,-1), every coefficient block populated.

    For p >= 2 the order is raised by multiplying the quadratic tables with the
    real factor Re(v_1)^{p-2}, which preserves both structural conditions.
    """
    if N != 2:
        raise ValueError("the benchmark system is defined for N = 2")
    nv = N
    re_v1v2bar = _mono(nv, 0.5, v={0: 1}, vbar={1: 1}) + _mono(nv, 0.5, v={1: 1}, vbar={0: 1})
    v1v2 = _mono(nv, 1.0, v={0: 1, 1: 1})
    v2sq = _mono(nv, 1.0, v={1: 2})
    v1bar_v2 = _mono(nv, 1.0, v={1: 1}, vbar={0: 1})
    v1_v2bar = _mono(nv, 1.0, v={0: 1}, vbar={1: 1})

    if p == 1:
        re_v1 = _mono(nv, 0.5, v={0: 1}) + _mono(nv, 0.5, vbar={0: 1})
        base_b = {(0, 0): re_v1, (1, 1): re_v1, (0, 1): _mono(nv, 1.0, v={1: 1})}
        base_c = {
            (0, 1): _mono(nv, 1.0, v={0: 1}),
            (1, 0): _mono(nv, 1.0, v={0: 1}),
            (0, 0): _mono(nv, 1.0, v={1: 1}),
        }
    else:
        bump = _mono(nv, 0.5, v={0: 1}) + _mono(nv, 0.5, vbar={0: 1})
        lift = Polynomial(nv, {((0,) * nv, (0,) * nv): 1.0})
        for _ in range(p - 2):
            lift = lift * bump
        base_b = {
            (0, 0): re_v1v2bar * lift,
            (1, 1): re_v1v2bar * lift,
            (0, 1): v1v2 * lift,
            (1, 0): v1bar_v2 * lift,
        }
        base_c = {
            (0, 1): v1v2 * lift,
            (1, 0): v1v2 * lift,
            (0, 0): v2sq * lift,
            (1, 1): v1_v2bar * lift,
        }

    b, c = {}, {}
    for l in range(d):
        scale = 1.0 if l == 0 else 0.5
        for (j, k), poly in base_b.items():
            b[(l, j, k)] = poly.scaled(scale)
        for (j, k), poly in base_c.items():
            c[(l, j, k)] = poly.scaled(scale)
    return SystemSpec(d=d, N=N, lambdas=(1.0, -1.0), p=p, b=b, c=c, name=f"benchmark-p{p}-d{d}")


# -- doubled-form coefficient tables ----------------------------------------


def _split_components(u: SpectralField, N: int):
    g = u.grid()
    return g[:N], g[N:]


def coefficient_tables(sys: SystemSpec, u: SpectralField) -> np.ndarray:
    """Evaluate the doubled-form coefficient matrix on the grid.

    Returns shape (d, 2N, 2N) + grid.  Row blocks: [[b, c], [conj c, conj b]],
    with conjugated-polynomial entries in the lower blocks.
    """
    N = sys.N
    v, vb = _split_components(u, N)
    shape = (sys.d, 2 * N, 2 * N) + u.ctx.shape
    mat = np.zeros(shape, dtype=complex)
    for l in range(sys.d):
        for j in range(N):
            for k in range(N):
                bp = sys.poly("b", l, j, k)
                cp = sys.poly("c", l, j, k)
                if not bp.is_zero():
                    mat[l, j, k] = bp.evaluate(v, vb)
                    mat[l, N + j, N + k] = bp.conjugated().evaluate(v, vb)
                if not cp.is_zero():
                    mat[l, j, N + k] = cp.evaluate(v, vb)
                    mat[l, N + j, k] = cp.conjugated().evaluate(v, vb)
    return mat


def _directional(poly: Polynomial, v, vb, hv, hvb) -> np.ndarray:
    out = np.zeros(v.shape[1:], dtype=complex)
    for m in range(poly.nvars):
        dv = poly.deriv(m, barred=False)
        if not dv.is_zero():
            out += dv.evaluate(v, vb) * hv[m]
        db = poly.deriv(m, barred=True)
        if not db.is_zero():
            out += db.evaluate(v, vb) * hvb[m]
    return out


def coefficient_tables_d1(sys: SystemSpec, u: SpectralField, h: SpectralField) -> np.ndarray:
    """Directional derivative of the coefficient matrix at u in direction h."""
    N = sys.N
    v, vb = _split_components(u, N)
    hv, hvb = _split_components(h, N)
    shape = (sys.d, 2 * N, 2 * N) + u.ctx.shape
    mat = np.zeros(shape, dtype=complex)
    for l in range(sys.d):
        for j in range(N):
            for k in range(N):
                bp = sys.poly("b", l, j, k)
                cp = sys.poly("c", l, j, k)
                if not bp.is_zero():
                    mat[l, j, k] = _directional(bp, v, vb, hv, hvb)
                    mat[l, N + j, N + k] = _directional(bp.conjugated(), v, vb, hv, hvb)
                if not cp.is_zero():
                    mat[l, j, N + k] = _directional(cp, v, vb, hv, hvb)
                    mat[l, N + j, k] = _directional(cp.conjugated(), v, vb, hv, hvb)
    return mat


def _second_directional(poly: Polynomial, v, vb, h1v, h1vb, h2v, h2vb) -> np.ndarray:
    out = np.zeros(v.shape[1:], dtype=complex)
    for m in range(poly.nvars):
        for barred_m, hm in ((False, h1v[m]), (True, h1vb[m])):
            dm = poly.deriv(m, barred=barred_m)
            if dm.is_zero():
                continue
            out += _directional(dm, v, vb, h2v, h2vb) * hm
    return out


def coefficient_tables_d2(
    sys: SystemSpec, u: SpectralField, h1: SpectralField, h2: SpectralField
) -> np.ndarray:
    """Second directional derivative of the coefficient matrix."""
    N = sys.N
    v, vb = _split_components(u, N)
    h1v, h1vb = _split_components(h1, N)
    h2v, h2vb = _split_components(h2, N)
    shape = (sys.d, 2 * N, 2 * N) + u.ctx.shape
    mat = np.zeros(shape, dtype=complex)
    for l in range(sys.d):
        for j in range(N):
            for k in range(N):
                for col_off, table in ((0, "b"), (N, "c")):
                    poly = sys.poly(table, l, j, k)
                    if poly.is_zero():
                        continue
                    mat[l, j, col_off + k] = _second_directional(poly, v, vb, h1v, h1vb, h2v, h2vb)
                    conj_col = k if col_off else N + k
                    mat[l, N + j, conj_col] = _second_directional(
                        poly.conjugated(), v, vb, h1v, h1vb, h2v, h2vb
                    )
    return mat


# -- operators ----------------------------------------------------------------


def apply_A(sys: SystemSpec, u: SpectralField) -> SpectralField:
    """A(eps dx) u: Fourier multiplier -lambda'_j |eps xi|^2 per component."""
    ctx = u.ctx
    lam = lambda_doubled(sys)
    sym = -(ctx.eps**2) * ctx.xi_sq  # |eps xi|^2 times the Laplacian sign
    coef = u.coef * (lam.reshape((-1,) + (1,) * ctx.d) * sym)
    return SpectralField(ctx, coef)


def _eps_gradient_grids(h: SpectralField, xi_weight: np.ndarray | None = None) -> np.ndarray:
    """(eps d_l h) on the grid for each l; shape (d, ncomp) + grid.

    xi_weight, if given, is an extra real Fourier multiplier (the frequency
    cutoff of the operator being quantized)."""
    ctx = h.ctx
    out = np.empty((ctx.d, h.ncomp) + ctx.shape, dtype=complex)
    for l in range(ctx.d):
        mult = 1j * ctx.eps * ctx.xi_grids()[l]
        if xi_weight is not None:
            mult = mult * xi_weight
        out[l] = ctx.to_grid(h.coef * mult)
    return out


def apply_B_from_tables(
    ctx: SemiclassicalContext,
    tables: np.ndarray,
    h: SpectralField,
    dealias: bool = True,
    xi_weight: np.ndarray | None = None,
) -> SpectralField:
    """B-type operator from precomputed coefficient tables:
    (sum_l tables[l] . (eps d_l h)) with a 2/3-rule dealias after the product."""
    grads = _eps_gradient_grids(h, xi_weight)
    out = np.einsum("ljk...,lk...->j...", tables, grads)
    coef = ctx.to_coef(out)
    if dealias:
        coef = coef * ctx.dealias_mask
    return SpectralField(ctx, coef)


def _check_amplitude(u: SpectralField):
    a = linf_norm(u)
    if a > MAX_AMPLITUDE + 1e-9:
        raise AmplitudeError(f"field amplitude {a:.3f} leaves the model ball (max {MAX_AMPLITUDE})")


def apply_B(sys: SystemSpec, u: SpectralField, h: SpectralField, dealias: bool = True) -> SpectralField:
    """B(u, eps dx) h for the doubled form.  Requires ||u||_inf <= 1."""
    _check_amplitude(u)
    return apply_B_from_tables(u.ctx, coefficient_tables(sys, u), h, dealias=dealias)


def apply_P(sys: SystemSpec, u: SpectralField) -> SpectralField:
    """Full quasilinear operator P(u) = i eps^{-2} A(eps dx) u - eps^{-1} B(u) u."""
    eps = u.ctx.eps
    lin = apply_A(sys, u) * (1j / eps**2)
    return lin - apply_B(sys, u, u) * (1.0 / eps)


def apply_R0(sys: SystemSpec, u: SpectralField, h: SpectralField) -> SpectralField:
    """Zeroth-order linearization remainder: -eps^{-1} (du B)(u)[h] u."""
    tables = coefficient_tables_d1(sys, u, h)
    return apply_B_from_tables(u.ctx, tables, u) * (-1.0 / u.ctx.eps)


def apply_P_prime(sys: SystemSpec, u: SpectralField, h: SpectralField) -> SpectralField:
    """Linearization: P'(u) h = i eps^{-2} A h - eps^{-1} B(u) h + R0(u) h."""
    eps = u.ctx.eps
    out = apply_A(sys, h) * (1j / eps**2)
    out = out - apply_B(sys, u, h) * (1.0 / eps)
    return out + apply_R0(sys, u, h)


def apply_P_second(
    sys: SystemSpec, u: SpectralField, h1: SpectralField, h2: SpectralField
) -> SpectralField:
    """Second derivative P''(u)[h1, h2]; symmetric in (h1, h2) exactly.

    The mixed table is symmetrized because the two evaluation orders group the
    floating-point products differently."""
    ctx = u.ctx
    t1 = coefficient_tables_d1(sys, u, h1)
    t2 = coefficient_tables_d1(sys, u, h2)
    t12 = 0.5 * (coefficient_tables_d2(sys, u, h1, h2) + coefficient_tables_d2(sys, u, h2, h1))
    out = apply_B_from_tables(ctx, t1, h2)
    out = out + apply_B_from_tables(ctx, t2, h1)
    out = out + apply_B_from_tables(ctx, t12, u)
    return out * (-1.0 / ctx.eps)


# -- initial data -------------------------------------------------------------


@dataclass
class DataProfile:
    """Initial-datum profile: a single-component base shape plus a placement
    mode, either 'concentrating' (a(x/eps)) or 'oscillating' (e^{i x.xi0/eps} a)."""

    base: SpectralField
    mode: str = "concentrating"
    xi0: tuple | None = None

    def __post_init__(self):
        if self.base.ncomp != 1:
            raise ValueError("profile base must be single-component")
        if self.mode not in ("concentrating", "oscillating"):
            raise ValueError(f"unknown profile mode {self.mode!r}")
        if self.mode == "oscillating" and self.xi0 is None:
            raise ValueError("oscillating profiles need a carrier xi0")

    @classmethod
    def gaussian(
        cls,
        ctx: SemiclassicalContext,
        width: float = 1.0,
        mode: str = "concentrating",
        xi0: tuple | None = None,
    ) -> "DataProfile":
        """Periodized Gaussian exp(-|x|^2/width^2), peak value 1.

        Built in Fourier space: by Poisson summation the coefficients of the
        periodization are exact Gaussian samples, so the tail keeps its
        exp(-width^2 xi^2/4) decay instead of flooring at the box-edge
        periodization level that sampling the grid would leave.
        """
        xi2 = sum(x**2 for x in ctx.xi_grids())
        coef = np.exp(-(width**2) * xi2 / 4.0).astype(complex)[None]
        f = SpectralField(ctx, coef)
        peak = float(np.max(np.abs(f.grid()[0])))
        return cls(f * (1.0 / peak), mode=mode, xi0=xi0)


def profile_scaling_exponent(profile: DataProfile, d: int) -> float:
    """Datum scaling exponent sigma_a: d/2 for concentration, 0 for oscillation."""
    return d / 2.0 if profile.mode == "concentrating" else 0.0


def _effective_band(field: SpectralField, rel_tol: float = 1e-13) -> int:
    mags = np.abs(field.coef[0])
    cutoff = rel_tol * float(np.max(mags))
    idx = np.abs(field.ctx.mode_axis)
    band = 0
    for ax in range(field.ctx.d):
        shape = [1] * field.ctx.d
        shape[ax] = field.ctx.n
        along = np.broadcast_to(idx.reshape(shape), field.ctx.shape)
        active = along[mags > cutoff]
        if active.size:
            band = max(band, int(np.max(active)))
    return band


def concentrate(base: SpectralField, eps: float) -> SpectralField:
    """One concentrated copy a(x/eps) on the same context.

    Realized by strided resampling of the grid samples (stride 1/eps, dyadic)
    with zeros outside the window |x_i| <= eps L/2.  A plain Fourier-side index
    spreading would periodize 1/eps copies into the box instead.
    """
    ctx = base.ctx
    stride = 1.0 / eps
    if abs(stride - round(stride)) > 1e-9:
        raise ValueError("concentration requires dyadic eps")
    stride = int(round(stride))
    if _effective_band(base) * stride > ctx.n // 2:
        raise LatticeOverflow(
            f"profile band {_effective_band(base)} spread by 1/eps={stride} exceeds the lattice"
        )
    g = base.grid()[0]
    n, half = ctx.n, ctx.n // 2
    offsets = np.arange(n) - half
    src = (half + offsets * stride) % n  # x = +L/2 wraps to the -L/2 sample
    valid = np.abs(offsets) * stride <= half
    if ctx.d == 1:
        out = np.where(valid, g[src], 0.0)
    else:
        out = g[np.ix_(src, src)]
        out = np.where(np.logical_and.outer(valid, valid), out, 0.0)
    return SpectralField.from_grid(ctx, out[None])


def oscillate(base: SpectralField, eps: float, xi0: tuple) -> SpectralField:
    """Oscillating placement e^{i x . xi0/eps} a(x): an exact lattice shift.

    A carrier off the frequency lattice is rounded to the nearest mode with a
    warning; only a shift past Nyquist is fatal.
    """
    ctx = base.ctx
    dk = 2 * np.pi / ctx.L
    shifts = []
    for l in range(ctx.d):
        s = xi0[l] / (eps * dk)
        if abs(s - round(s)) > 1e-9:
            warnings.warn(
                f"carrier xi0/eps off the frequency lattice (axis {l}); rounding to mode {round(s)}",
                stacklevel=2,
            )
        shifts.append(int(round(s)))
    band = _effective_band(base)
    if any(band + abs(s) >= ctx.n // 2 for s in shifts):
        raise LatticeOverflow("carrier shift pushes the profile band past Nyquist")
    coef = base.coef
    for ax, s in enumerate(shifts):
        coef = np.roll(coef, s, axis=1 + ax)
    return SpectralField(ctx, coef)


def placed_profile(profile: DataProfile, eps: float) -> SpectralField:
    if profile.mode == "concentrating":
        return concentrate(profile.base, eps)
    return oscillate(profile.base, eps, profile.xi0)


def make_initial_datum(
    sys: SystemSpec,
    profile: DataProfile,
    sigma: float,
    norm_s: float | None = None,
    norm_value: float | None = None,
) -> SpectralField:
    """Datum u0 = eps^sigma (T_eps a, ..., conj T_eps a) in conjugate-pair form.

    The single-component base is broadcast to all N upper components.  If
    norm_s/norm_value are given the datum is renormalized so that its
    H^{norm_s}_eps norm equals norm_value exactly.
    """
    ctx = profile.base.ctx
    placed = placed_profile(profile, ctx.eps)
    stacked = SpectralField(ctx, np.concatenate([placed.coef] * sys.N))
    u0 = make_conjugate_pair(stacked) * (ctx.eps**sigma)
    if norm_value is not None:
        if norm_s is None:
            raise ValueError("norm_value needs norm_s")
        current = hs_norm(u0, norm_s)
        if current == 0.0:
            raise ValueError("cannot normalize a zero datum")
        u0 = u0 * (norm_value / current)
    return u0


# -- serialization ------------------------------------------------------------


def system_to_dict(sys: SystemSpec) -> dict:
    def table_to_json(table):
        return [
            {"l": l, "j": j, "k": k, "poly": poly.to_jsonable()}
            for (l, j, k), poly in sorted(table.items())
        ]

    return {
        "format": "system-1",
        "d": sys.d,
        "N": sys.N,
        "lambdas": list(sys.lambdas),
        "p": sys.p,
        "name": sys.name,
        "b": table_to_json(sys.b),
        "c": table_to_json(sys.c),
    }


def system_from_dict(data: dict, allow_nontransparent: bool = False) -> SystemSpec:
    if data.get("format") != "system-1":
        raise ValueError(f"unsupported system format {data.get('format')!r}")
    N = int(data["N"])

    def table_from_json(entries):
        return {
            (e["l"], e["j"], e["k"]): Polynomial.from_jsonable(N, e["poly"]) for e in entries
        }

    sys = SystemSpec(
        d=int(data["d"]),
        N=N,
        lambdas=tuple(data["lambdas"]),
        p=int(data["p"]),
        b=table_from_json(data["b"]),
        c=table_from_json(data["c"]),
        name=data.get("name", "custom"),
    )
    report = transparency_check(sys)
    if not report.ok and not allow_nontransparent:
        raise TransparencyError("; ".join(report.violations))
    return sys


def load_system(path, allow_nontransparent: bool = False) -> SystemSpec:
    with open(path) as fh:
        return system_from_dict(json.load(fh), allow_nontransparent=allow_nontransparent)
