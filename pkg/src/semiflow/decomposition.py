"""Free-flow/correction decomposition of the Cauchy problem.

The unknown is split as u = eps^sigma S T_eps a + u~ where a is a fixed
spatial profile carried by the exact free flow (concentrated or oscillating
placement) and u~ is a correction vanishing at t = 0.  The map

    PhiT(a, u~) = (dt u + P(u), a)

turns the Cauchy problem with structured datum into PhiT = (0, a0).  The
linearized problem is triangular: the profile equation is solved by copying
g2, and the correction solves the linear Cauchy problem with a source picking
up the coupling terms of the free-flow component.

Norms are non-isotropic: plain Sobolev norms on profiles, semiclassical ones
on corrections, with the X / Z / mZ scalings that make the iteration ball
eps-uniform.  Smoothings act with matching truncations (unit-scale on
profiles, semiclassical on corrections).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spectral import (
    NormTag,
    SemiclassicalContext,
    SpectralField,
    block_count,
    make_conjugate_pair,
    make_context,
    plain_block,
    plain_block_count,
    plain_hs_norm,
    plain_smooth,
)
from .systems import (
    DataProfile,
    LatticeOverflow,
    SystemSpec,
    apply_B,
    apply_B_from_tables,
    apply_P,
    apply_R0,
    benchmark_system,
    coefficient_tables,
    coefficient_tables_d1,
    coefficient_tables_d2,
    concentrate,
    oscillate,
)
from .evolution import TimeGrid, TrajectoryField, free_flow, solve_linearized
from .nashmoser import (
    BanachScalePair,
    NmhConfig,
    NmhProblem,
    Pair,
    nmh_solve,
)

__all__ = [
    "OutsideBall",
    "DecomposedState",
    "DecompositionSetup",
    "DecomposedNorm",
    "apply_Phi_tilde",
    "solve_linearized_decomposed",
    "build_decomposed_scale",
    "build_decomposed_problem",
    "with_loss_config",
    "with_loss_experiment",
    "fit_loglog_slope",
]


class OutsideBall(RuntimeError):
    """Base point of a linearized solve violates the admissible ball."""


class DecomposedState:
    """Pair (profile a, correction u~) with vector-space operations.

    a is a single-component spatial field; u~ is a trajectory with u~(0) = 0,
    enforced exactly by zeroing the first slice on construction.
    """

    def __init__(self, a: SpectralField, ut: TrajectoryField):
        if a.ncomp != 1:
            raise ValueError("profile component must be a single function of x")
        ut.coef[0] = 0.0
        self.a = a
        self.ut = ut

    def __add__(self, other):
        return DecomposedState(self.a + other.a, self.ut + other.ut)

    def __sub__(self, other):
        return DecomposedState(self.a - other.a, self.ut - other.ut)

    def __mul__(self, c):
        return DecomposedState(self.a * c, self.ut * c)

    __rmul__ = __mul__

    def copy(self):
        return DecomposedState(self.a.copy(), self.ut.copy())

    @classmethod
    def zero(cls, ctx, times, ncomp):
        return cls(SpectralField.zero(ctx, 1), TrajectoryField.zero(ctx, times, ncomp))

    def smoothed(self, j: int) -> "DecomposedState":
        """Mixed truncation: unit-scale on the profile, semiclassical on u~."""
        return DecomposedState(plain_smooth(self.a, j), self.ut.smooth(j))


@dataclass
class DecomposedNorm:
    """X / Z / mZ norm families on decomposed states.

    X^s = eps^sigma ||a||_{H^s} + eps^{-d/2} ||u~||_{C1_eps H^s_eps};
    Z = eps^{-1} X; mZ = eps^{(sigma_a - 1 - d/2)/p} X.
    """

    family: str
    sigma: float
    sigma_a: float
    d: int
    p: float
    eps: float

    def __post_init__(self):
        if self.family not in ("X", "Z", "mZ"):
            raise ValueError(f"unknown norm family {self.family!r}")

    def scaling(self) -> float:
        if self.family == "X":
            return 1.0
        if self.family == "Z":
            return self.eps**-1.0
        return self.eps ** ((self.sigma_a - 1.0 - self.d / 2.0) / self.p)

    def x_value(self, state: DecomposedState, s: float) -> float:
        prof = self.eps**self.sigma * plain_hs_norm(state.a, s)
        corr = self.eps ** (-self.d / 2.0) * state.ut.norm(NormTag("C1Hs", s=s))
        return prof + corr

    def value(self, state: DecomposedState, s: float) -> float:
        return self.scaling() * self.x_value(state, s)


@dataclass
class DecompositionSetup:
    """Frozen problem geometry: system, grids, datum placement and sigma."""

    sys: SystemSpec
    ctx: SemiclassicalContext
    tgrid: TimeGrid
    sigma: float
    mode: str = "concentrating"
    xi0: tuple | None = None

    def __post_init__(self):
        if self.mode not in ("concentrating", "oscillating"):
            raise ValueError(f"unknown placement mode {self.mode!r}")
        if self.mode == "oscillating" and self.xi0 is None:
            raise ValueError("oscillating placement needs a carrier xi0")

    @property
    def sigma_a(self) -> float:
        return self.ctx.d / 2.0 if self.mode == "concentrating" else 0.0

    def profile_mode_limit(self) -> int:
        """Largest per-axis profile mode that placement can represent."""
        if self.mode == "concentrating":
            stride = int(round(1.0 / self.ctx.eps))
            return (self.ctx.n // 2) // stride
        dk = 2 * np.pi / self.ctx.L
        shift = max(abs(int(round(x / (self.ctx.eps * dk)))) for x in self.xi0)
        return max(0, self.ctx.n // 2 - shift - 1)

    def project_placeable(self, a: SpectralField, limit: int | None = None) -> tuple[SpectralField, float]:
        """Project onto placeable modes; returns (projection, dropped l2 fraction)."""
        if limit is None:
            limit = self.profile_mode_limit()
        idx = np.abs(self.ctx.mode_axis)
        keep = np.ones(self.ctx.shape, dtype=bool)
        for ax in range(self.ctx.d):
            shape = [1] * self.ctx.d
            shape[ax] = self.ctx.n
            keep &= idx.reshape(shape) <= limit
        clipped = SpectralField(self.ctx, a.coef * keep)
        total = float(np.linalg.norm(a.coef))
        dropped = float(np.linalg.norm(a.coef * ~keep))
        return clipped, (dropped / total if total > 0 else 0.0)

    def place_pair(self, a: SpectralField) -> SpectralField:
        """T_eps on the profile, broadcast to N components, conjugate pair.

        Unit-scale smoothing windows outgrow the placeable band once 2^j
        passes n eps / 2, so placement projects onto that band first; the
        caller is responsible for checking the dropped mass where it matters
        (the datum at the start of an experiment, never the roundoff tail of
        a late iterate).
        """
        a, _ = self.project_placeable(a)
        if self.mode == "concentrating":
            placed = concentrate(a, self.ctx.eps)
        else:
            placed = oscillate(a, self.ctx.eps, self.xi0)
        stacked = SpectralField(self.ctx, np.concatenate([placed.coef] * self.sys.N))
        return make_conjugate_pair(stacked)

    def flow_of_profile(self, a: SpectralField) -> TrajectoryField:
        """eps^sigma S T_eps a: exact free flow of the placed profile."""
        y0 = self.place_pair(a) * (self.ctx.eps**self.sigma)
        return free_flow(self.sys, y0, self.tgrid)

    def assemble(self, state: DecomposedState) -> TrajectoryField:
        return self.flow_of_profile(state.a) + state.ut

    def zero_state(self) -> DecomposedState:
        return DecomposedState.zero(self.ctx, self.tgrid.times, 2 * self.sys.N)


def apply_Phi_tilde(setup: DecompositionSetup, state: DecomposedState) -> Pair:
    """(dt u + P(u), a) for the assembled u."""
    u = setup.assemble(state)
    res = np.empty_like(u.coef)
    for k in range(u.nslices):
        res[k] = (u.dt_field(k) + apply_P(setup.sys, u.field(k))).coef
    return Pair(TrajectoryField(setup.ctx, u.times, res), state.a.copy())


def solve_linearized_decomposed(
    setup: DecompositionSetup,
    state: DecomposedState,
    g: Pair,
    ball_radius: float | None = None,
    ball_norm: DecomposedNorm | None = None,
    ball_s: float | None = None,
    source_derivative: bool | None = None,
    **solver_kw,
):
    """Triangular right inverse of PhiT'(a, u~).

    b = g2 directly; the correction solves the linear Cauchy problem with
    f1 = g1 + eps^{-1} B(u) y_b - R0(u) y_b  (y_b the free flow of the placed
    g2) and f2 = 0, which keeps the h~(0) = 0 constraint exact.

    When the inner solver substeps or checks residuals it interpolates f1
    between slices, and the coupling terms oscillate at the free-flow rate;
    f1 then gets an exact time-derivative slab (product rule over du/dt and
    dy_b/dt) so the interpolation is cubic rather than slice-linear.  Set
    source_derivative to override the default choice.
    """
    if ball_radius is not None:
        s_chk = ball_s if ball_s is not None else 0.0
        size = ball_norm.value(state, s_chk)
        if size > ball_radius * (1 + 1e-9):
            raise OutsideBall(f"state norm {size:.3e} exceeds ball radius {ball_radius:.3e}")

    sys, ctx = setup.sys, setup.ctx
    g1, b = g.first, g.second
    u = setup.assemble(state)
    y_b = setup.flow_of_profile(b)

    want_dt = source_derivative
    if want_dt is None:
        want_dt = solver_kw.get("refine", 1) > 1 or solver_kw.get("residual_check", True)
    want_dt = (
        want_dt
        and u.dt_coef is not None
        and (g1 is None or g1.dt_coef is not None)
    )

    eps = ctx.eps
    f1_coef = np.empty_like(y_b.coef)
    f1_dt = np.empty_like(y_b.coef) if want_dt else None
    for k in range(u.nslices):
        u_k = u.field(k)
        y_k = y_b.field(k)
        extra = apply_B(sys, u_k, y_k) * (1.0 / eps) - apply_R0(sys, u_k, y_k)
        f1_coef[k] = extra.coef
        if g1 is not None:
            f1_coef[k] += g1.coef[k]
        if want_dt:
            du_k = u.dt_field(k)
            dy_k = y_b.dt_field(k)
            t_u = coefficient_tables(sys, u_k)
            t_du = coefficient_tables_d1(sys, u_k, du_k)
            t_y = coefficient_tables_d1(sys, u_k, y_k)
            t_dy = coefficient_tables_d1(sys, u_k, dy_k)
            t_duy = coefficient_tables_d2(sys, u_k, du_k, y_k)
            ddt = (
                apply_B_from_tables(ctx, t_du, y_k)
                + apply_B_from_tables(ctx, t_u, dy_k)
                + apply_B_from_tables(ctx, t_duy, u_k)
                + apply_B_from_tables(ctx, t_dy, u_k)
                + apply_B_from_tables(ctx, t_y, du_k)
            ) * (1.0 / eps)
            f1_dt[k] = ddt.coef
            if g1 is not None:
                f1_dt[k] += g1.dt_coef[k]
    f1 = TrajectoryField(ctx, u.times, f1_coef, f1_dt)

    h_t, info = solve_linearized(
        sys, u, f1, SpectralField.zero(ctx, 2 * sys.N), **solver_kw
    )
    return DecomposedState(b.copy(), h_t), info


def build_decomposed_scale(setup: DecompositionSetup, s0: float, p: float) -> BanachScalePair:
    """Banach scale pair of the decomposed problem at base regularity s0.

    Domain: mZ norms for p > 1, Z norms for p = 1 (the p = 1 route is not
    theorem-backed; kept as an experimental mode).  Codomain: the weighted
    pair norm with the one-derivative loss on the profile datum component.
    """
    eps, d = setup.ctx.eps, setup.ctx.d
    family = "Z" if p == 1 else "mZ"
    enorm = DecomposedNorm(family, setup.sigma, setup.sigma_a, d, p, eps)

    if p == 1:
        g1_weight = eps ** (-setup.sigma - setup.sigma_a)
    else:
        g1_weight = eps ** (-setup.sigma - d / 2.0)

    def e_norm(state, a):
        return enorm.value(state, s0 + a)

    def f_norm(g, a):
        g1, g2 = g.first, g.second
        v = 0.0
        if g1 is not None:
            v += g1_weight * g1.norm(NormTag("C0Hs", s=s0 + a))
        v += plain_hs_norm(g2, s0 + a + 1)
        return v

    def smooth_e(state, j):
        return state.smoothed(j)

    def smooth_f(g, j):
        return Pair(g.first.smooth(j), plain_smooth(g.second, j))

    def block_f(g, j):
        t = setup.ctx.eps_abs_xi
        mask = (t <= 2.0) if j == 0 else ((t > 2.0**j) & (t <= 2.0 ** (j + 1)))
        traj = TrajectoryField(g.first.ctx, g.first.times, g.first.coef * mask)
        return Pair(traj, plain_block(g.second, j))

    nblocks = max(block_count(setup.ctx), plain_block_count(setup.ctx))
    return BanachScalePair(
        e_norm=e_norm,
        f_norm=f_norm,
        smooth_e=smooth_e,
        smooth_f=smooth_f,
        block_f=block_f,
        block_count=nblocks,
    )


def build_decomposed_problem(
    setup: DecompositionSetup,
    ball_radius: float,
    s0: float,
    p: float,
    refine: int = 1,
) -> NmhProblem:
    family = "Z" if p == 1 else "mZ"
    ball_norm = DecomposedNorm(family, setup.sigma, setup.sigma_a, setup.ctx.d, p, setup.ctx.eps)

    def psi(v_state, f_pair):
        inc, info = solve_linearized_decomposed(
            setup,
            v_state,
            f_pair,
            ball_radius=ball_radius,
            ball_norm=ball_norm,
            ball_s=s0 + 2,
            refine=refine,
            residual_check=False,
        )
        return inc, info

    def query_frequency(v_state):
        absxi = np.sqrt(setup.ctx.xi_sq)
        prof = np.max(np.abs(v_state.a.coef), axis=0)
        corr = np.max(np.abs(v_state.ut.coef), axis=(0, 1))
        out = 0.0
        for mags in (prof, corr):
            m = float(np.max(mags))
            if m > 0:
                out = max(out, float(np.max(absxi[mags > 1e-13 * m])))
        return out

    return NmhProblem(
        phi=lambda st: apply_Phi_tilde(setup, st),
        psi=psi,
        zero=setup.zero_state,
        query_frequency=query_frequency,
        name="decomposed",
    )


def with_loss_threshold(d: int, p: float, sigma_a: float) -> float:
    return (1.0 + d / 2.0 - sigma_a) / p


def with_loss_config(
    setup: DecompositionSetup, s0: float, p: float, rho2: float = 0.5, c_table: float = 1.0
) -> NmhConfig:
    """Constant tables of the decomposed problem (p > 1 path).

    M1 = M2 = C eps^{-sigma + thr}, L1 = L2 = C eps^{sigma - thr} with
    thr = (1 + d/2 - sigma_a)/p; beta = alpha = s0 + 3.
    """
    eps, d = setup.ctx.eps, setup.ctx.d
    thr = with_loss_threshold(d, p, setup.sigma_a)
    expo = -setup.sigma + thr
    beta = s0 + 3.0
    a2 = math.floor(2 * beta - 2) + 1.0
    m_val = c_table * eps**expo
    l_val = c_table * eps**-expo
    return NmhConfig(
        a0=0.0,
        mu=2.0,
        a1=2.0,
        a2=a2,
        alpha=beta,
        beta=beta,
        delta1=rho2,
        M1=lambda a: m_val,
        M2=lambda a: m_val,
        L1=lambda a: l_val,
        L2=lambda a: l_val,
    )


def fit_loglog_slope(xs, ys) -> float:
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


def with_loss_experiment(
    d: int,
    p: int,
    eps_list,
    sigma: float,
    mode: str = "concentrating",
    xi0: tuple | None = None,
    n: int = 1024,
    L: float = 16.0,
    T: float = 1.0,
    nsteps: int = 256,
    s1: float = 6.5,
    amp: float = 0.05,
    width: float = 2.0,
    probe_below: bool = False,
    force: bool = False,
    refine: int = 1,
) -> dict:
    """Correction-size scaling study of the decomposed solver.

    For each eps, solves PhiT(a, u~) = (0, a0) with ||a0||_{H^{s0+beta+1}} =
    amp and records the correction norm ||u~||_{C1_eps H^{s0+beta}_eps}, the
    ratio to eps^{sigma+d/2} ||a0|| and convergence metadata.  The fitted
    log-log exponent of the correction against eps is attached.
    """
    s0 = (s1 - 4.0) / 2.0
    beta = s0 + 3.0
    sigma_a = d / 2.0 if mode == "concentrating" else 0.0
    thr = with_loss_threshold(d, p, sigma_a)
    if sigma <= thr and not probe_below:
        raise ValueError(
            f"sigma = {sigma} is at or below the threshold {thr}; pass probe_below to run anyway"
        )

    # One profile for the whole sweep, band-limited to what the smallest eps
    # can place, so the scaling fit compares placements of the same datum.
    records = []
    limit = None
    for eps in eps_list:
        ctx = make_context(d, L, n, eps)
        sys = benchmark_system(d, p)
        tgrid = TimeGrid(T, nsteps)
        setup = DecompositionSetup(sys, ctx, tgrid, sigma, mode=mode, xi0=xi0)
        if limit is None:
            ref = DecompositionSetup(
                sys, make_context(d, L, n, min(eps_list)), tgrid, sigma, mode=mode, xi0=xi0
            )
            limit = ref.profile_mode_limit()

        raw = DataProfile.gaussian(ctx, width=width).base
        base, cut = setup.project_placeable(raw, limit=limit)
        if cut > 1e-4:
            raise LatticeOverflow(
                f"profile loses {cut:.2e} of its mass to the placeable band at the"
                f" smallest eps; raise n or widen the profile"
            )
        a0 = base * (amp / plain_hs_norm(base, s0 + beta + 1))

        scale = build_decomposed_scale(setup, s0, p)
        cfg = with_loss_config(setup, s0, p)
        problem = build_decomposed_problem(setup, rho2_radius(cfg), s0, p, refine=refine)
        g = Pair(TrajectoryField.zero(ctx, tgrid.times, 2 * sys.N, with_dt=False), a0)

        rec = {
            "eps": eps,
            "sigma": sigma,
            "mode": mode,
            "threshold": thr,
            "a0_norm": plain_hs_norm(a0, s0 + beta + 1),
        }
        try:
            state, result = nmh_solve(problem, scale, cfg, g, force=force)
            corr = state.ut.norm(NormTag("C1Hs", s=s0 + beta))
            rec.update(
                converged=True,
                iterations=result["iterations"],
                final_residual=result["final_residual"],
                correction_norm=corr,
                bound_ratio=corr / (eps ** (sigma + d / 2.0) * rec["a0_norm"]),
                qui_ratio=result["bound_ratio"],
                A=result["A"],
                delta=result["delta"],
                trace=result["trace"],
            )
        except Exception as exc:  # noqa: BLE001 - probes below threshold are expected to fail
            rec.update(converged=False, error=type(exc).__name__, message=str(exc))
            if not (probe_below or force):
                raise
        records.append(rec)

    good = [r for r in records if r.get("converged")]
    fit = None
    if len(good) >= 2:
        fit = fit_loglog_slope([r["eps"] for r in good], [r["correction_norm"] for r in good])
    return {
        "records": records,
        "fitted_exponent": fit,
        "expected_exponent": sigma + d / 2.0,
        "s0": s0,
        "beta": beta,
    }


def rho2_radius(cfg: NmhConfig) -> float:
    return cfg.delta1
