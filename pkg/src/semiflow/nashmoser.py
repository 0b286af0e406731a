"""Generic Nash-Moser-Hörmander engine on abstract Banach scales.

The engine never touches PDE objects: a problem supplies the map Phi, its
right inverse Psi (queried only at smoothed points), and a scale supplies
norm families indexed by a real parameter together with smoothing/block
operators.  Elements of the domain and codomain only need +, -, scalar *.

Alongside the iteration live the two closed-form pieces of bookkeeping that
the convergence theorem attaches to a problem: the admissible data radius
delta = 1/B assembled from the constant tables, and the optimal-rescaling
radius r* minimizing phi(r) = A/r + (B+C) r^{p-1}.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

__all__ = [
    "Pair",
    "BanachScalePair",
    "NmhProblem",
    "NmhConfig",
    "ConfigReport",
    "DeltaReport",
    "RadiusReport",
    "IterationStep",
    "IterationTrace",
    "BallEscape",
    "NoConvergence",
    "DataSizeError",
    "validate_config",
    "compute_delta",
    "optimize_radius",
    "data_condition",
    "nmh_solve",
    "higher_regularity_audit",
]


class BallEscape(RuntimeError):
    """Iterate left the admissible ball; carries the trace so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class NoConvergence(RuntimeError):
    """Residual stagnated or the iteration cap was hit."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class DataSizeError(ValueError):
    """Datum exceeds the admissible radius delta (use force to override)."""


class Pair:
    """Two-component element with pointwise vector operations.

    Used for codomain pairs (source term, initial value) and for decomposed
    domain elements; components must themselves support +, -, scalar *.
    """

    __slots__ = ("first", "second")

    def __init__(self, first, second):
        self.first = first
        self.second = second

    def __add__(self, other):
        return Pair(self.first + other.first, self.second + other.second)

    def __sub__(self, other):
        return Pair(self.first - other.first, self.second - other.second)

    def __mul__(self, a):
        return Pair(self.first * a, self.second * a)

    __rmul__ = __mul__

    def __iter__(self):
        yield self.first
        yield self.second


@dataclass
class BanachScalePair:
    """Norms, smoothings and dyadic blocks for a domain/codomain scale pair.

    e_norm(x, a), f_norm(g, a): the two norm families.
    smooth_e(x, j), smooth_f(g, j): S_j truncations (theta = 2^j).
    block_f(g, j): R_0 = S_1, R_j = S_{j+1} - S_j on the codomain.
    block_count: number of possibly nonzero blocks on the (finite) lattice.
    """

    e_norm: Callable
    f_norm: Callable
    smooth_e: Callable
    smooth_f: Callable
    block_f: Callable
    block_count: int


@dataclass
class NmhProblem:
    """Problem callbacks for the iteration.

    phi(x) -> codomain element; psi(v, f) -> (increment, info dict), defined
    for smoothed v in the ball e_norm(v, a1) <= delta1; zero() -> domain zero.
    query_frequency(v) optionally reports the largest active frequency of a
    smoothed query point (traced to audit the smoothing schedule).
    """

    phi: Callable
    psi: Callable
    zero: Callable
    phi_second: Callable | None = None
    query_frequency: Callable | None = None
    name: str = "problem"


@dataclass
class NmhConfig:
    """Index choices and constant tables of the convergence theorem.

    Tables M1..M3 (second-derivative constants) and L1..L3 (right-inverse
    constants) are callables of the scale index a.  cprime and qui_c are the
    calibration constants entering delta = 1/B and the final solution bound;
    both default to 1 and are tuned per problem family.
    """

    a0: float
    mu: float
    a1: float
    a2: float
    alpha: float
    beta: float
    delta1: float = 1.0
    M1: Callable = lambda a: 0.0
    M2: Callable = lambda a: 0.0
    M3: Callable = lambda a: 0.0
    L1: Callable = lambda a: 1.0
    L2: Callable = lambda a: 1.0
    L3: Callable = lambda a: 0.0
    cprime: float = 1.0
    qui_c: float = 1.0
    tol: float = 1e-8
    tol_floor: float = 1e-14
    max_iter: int = 40
    theta_base: float = 2.0
    strict: bool = True

    def __post_init__(self):
        if self.strict:
            report = validate_config(self)
            if not report.ok:
                raise ValueError("; ".join(report.failures))

    def theta(self, n: int) -> float:
        return self.theta_base**n

    def m123(self, a: float) -> float:
        return self.M1(a) + self.M2(a) + self.M3(a)

    def l123(self, a: float) -> float:
        return self.L1(a) + self.L2(a) + self.L3(a)


@dataclass
class ConfigReport:
    ok: bool
    failures: list
    checks: dict


def validate_config(cfg: NmhConfig) -> ConfigReport:
    """Check the three index chains; each failure names its inequality."""
    checks = {
        "0 <= a0": cfg.a0 >= 0,
        "a0 <= mu": cfg.a0 <= cfg.mu,
        "mu <= a1": cfg.mu <= cfg.a1,
        "a1 + beta/2 < alpha": cfg.a1 + cfg.beta / 2 < cfg.alpha,
        "alpha < a1 + beta": cfg.alpha < cfg.a1 + cfg.beta,
        "2*alpha < a1 + a2": 2 * cfg.alpha < cfg.a1 + cfg.a2,
        "delta1 > 0": cfg.delta1 > 0,
    }
    failures = [name for name, ok in checks.items() if not ok]
    return ConfigReport(ok=not failures, failures=failures, checks=checks)


@dataclass
class DeltaReport:
    delta: float
    B: float
    branches: dict
    dominant: str


def compute_delta(cfg: NmhConfig, A: float) -> DeltaReport:
    """Admissible data radius delta = 1/B.

    B = C' * L123(a2) * max{ 1/delta1, 1+A, (1+A) * L123(a2) * M123(a2-mu) };
    the dominant branch tells which mechanism limits the radius (ball size,
    linear solve, or the quadratic term of the Newton remainder).
    """
    if A < 0:
        raise ValueError("A must be nonnegative")
    l_val = cfg.l123(cfg.a2)
    m_val = cfg.m123(cfg.a2 - cfg.mu)
    if l_val <= 0 or cfg.delta1 <= 0 or cfg.cprime <= 0:
        raise ValueError("constants must be positive")
    branches = {
        "ball": 1.0 / cfg.delta1,
        "linear": 1.0 + A,
        "quadratic": (1.0 + A) * l_val * m_val,
    }
    dominant = max(branches, key=branches.get)
    B = cfg.cprime * l_val * branches[dominant]
    return DeltaReport(delta=1.0 / B, B=B, branches=branches, dominant=dominant)


@dataclass
class RadiusReport:
    r_star: float
    delta_star: float
    lam_star: float
    r0: float | None
    constrained: bool


def optimize_radius(A: float, B: float, C: float, R: float, p: float) -> RadiusReport:
    """Best rescaling radius for phi(r) = A/r + (B+C) r^{p-1} on (0, R].

    For p = 1 phi is decreasing, so r* = R.  For p > 1 the interior minimum
    is r0 = (A / ((p-1)(B+C)))^{1/p}, clipped at R.  Returns the radius,
    delta* = 1/phi(r*) and the rescaling factor lambda* = 1/r*.
    """
    if min(A, B, C, R) <= 0:
        raise ValueError("A, B, C, R must be positive")
    if p < 1:
        raise ValueError("p must be >= 1")
    bc = B + C
    if p == 1:
        r0 = None
        r_star = R
        constrained = True
    else:
        r0 = (A / ((p - 1) * bc)) ** (1.0 / p)
        constrained = R <= r0
        r_star = R if constrained else r0
    delta_star = 1.0 / (A / r_star + bc * r_star ** (p - 1))
    return RadiusReport(
        r_star=r_star, delta_star=delta_star, lam_star=1.0 / r_star, r0=r0, constrained=constrained
    )


@dataclass
class IterationStep:
    n: int
    theta: float
    e_alpha: float
    e_a1: float
    res_a1: float
    res_beta: float
    ball_ok: bool
    query_freq: float | None = None
    psi_info: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "theta": self.theta,
                "e_alpha": self.e_alpha,
                "e_a1": self.e_a1,
                "res_a1": self.res_a1,
                "res_beta": self.res_beta,
                "ball_ok": self.ball_ok,
                "query_freq": self.query_freq,
                "psi_info": {k: v for k, v in self.psi_info.items() if isinstance(v, (int, float, bool, str))},
            }
        )


class IterationTrace:
    """Append-only record of the iteration, exportable as JSON lines."""

    def __init__(self):
        self.steps: list[IterationStep] = []

    def append(self, step: IterationStep):
        self.steps.append(step)

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def residuals(self) -> list:
        return [s.res_a1 for s in self.steps]

    def to_jsonl(self) -> str:
        return "\n".join(s.to_json() for s in self.steps)


def data_condition(scale: BanachScalePair, g, beta: float) -> float:
    """A with sum_j ||R_j g||^2_{F_beta} = A^2 ||g||^2_{F_beta} (exact on the lattice)."""
    gnorm = scale.f_norm(g, beta)
    if gnorm == 0:
        return 0.0
    total = 0.0
    for j in range(scale.block_count):
        total += scale.f_norm(scale.block_f(g, j), beta) ** 2
    return math.sqrt(total) / gnorm


def nmh_solve(
    problem: NmhProblem,
    scale: BanachScalePair,
    cfg: NmhConfig,
    g,
    force: bool = False,
    variant: str = "newton",
):
    """Smoothed Newton iteration for Phi(u) = Phi(0) + g.

    u_{n+1} = u_n + Psi(S_n u_n)[ S_n(Phi(0) + g - Phi(u_n)) ], theta_n = 2^n.
    The datum must satisfy ||g||_{F_beta} <= delta from compute_delta unless
    force is set.  variant="dyadic" feeds the dyadic pieces R_n g instead of
    the full datum (partial targets), same stopping rule.

    Returns (u, result dict with trace, A, delta, the measured constant of
    the solution bound, and convergence metadata).  Raises BallEscape /
    NoConvergence with the trace attached.
    """
    report = validate_config(cfg)
    if not report.ok:
        raise ValueError("; ".join(report.failures))
    if variant not in ("newton", "dyadic"):
        raise ValueError(f"unknown variant {variant!r}")

    A = data_condition(scale, g, cfg.beta)
    delta_rep = compute_delta(cfg, A)
    gnorm = scale.f_norm(g, cfg.beta)
    if gnorm > delta_rep.delta and not force:
        raise DataSizeError(
            f"||g||_F_beta = {gnorm:.3e} exceeds delta = {delta_rep.delta:.3e}"
        )

    u = problem.zero()
    phi0 = problem.phi(u)
    tol_abs = max(cfg.tol * gnorm, cfg.tol_floor)
    trace = IterationTrace()

    if variant == "dyadic":
        pieces = [scale.block_f(g, j) for j in range(scale.block_count)]

    converged = False
    for n in range(cfg.max_iter):
        if variant == "dyadic":
            target_g = pieces[0]
            for piece in pieces[1 : min(n + 1, len(pieces))]:
                target_g = target_g + piece
        else:
            target_g = g
        residual = phi0 + target_g - problem.phi(u)
        res_a1 = scale.f_norm(residual, cfg.a1)
        res_beta = scale.f_norm(residual, cfg.beta)
        # full-datum residual governs the stopping decision
        if variant == "dyadic":
            full_res = phi0 + g - problem.phi(u)
            stop_res = scale.f_norm(full_res, cfg.a1)
        else:
            stop_res = res_a1

        v = scale.smooth_e(u, n)
        e_a1_v = scale.e_norm(v, cfg.a1)
        ball_ok = e_a1_v <= cfg.delta1 * (1 + 1e-9)
        step = IterationStep(
            n=n,
            theta=cfg.theta(n),
            e_alpha=scale.e_norm(u, cfg.alpha),
            e_a1=e_a1_v,
            res_a1=res_a1,
            res_beta=res_beta,
            ball_ok=ball_ok,
            query_freq=None if problem.query_frequency is None else problem.query_frequency(v),
        )
        trace.append(step)

        if stop_res <= tol_abs and (variant == "newton" or n >= len(pieces)):
            converged = True
            break
        if not ball_ok:
            raise BallEscape(
                f"iterate left the ball at step {n}: ||S_n u||_E_a1 = {e_a1_v:.3e} > {cfg.delta1}",
                trace,
            )
        if not math.isfinite(res_a1) or res_a1 > max(1.0, gnorm) * 1e6:
            raise BallEscape(f"residual blow-up at step {n}: {res_a1:.3e}", trace)
        if n >= 6 and res_a1 > 0.99 * trace.steps[n - 3].res_a1:
            raise NoConvergence(f"residual stagnation at step {n} ({res_a1:.3e})", trace)

        du, psi_info = problem.psi(v, scale.smooth_f(residual, n))
        step.psi_info = psi_info
        u = u + du

    if not converged:
        raise NoConvergence(f"no convergence in {cfg.max_iter} iterations", trace)

    e_alpha = scale.e_norm(u, cfg.alpha)
    bound_rhs = cfg.qui_c * cfg.l123(cfg.a2) * (1 + A) * gnorm
    result = {
        "trace": trace,
        "A": A,
        "delta": delta_rep.delta,
        "delta_report": delta_rep,
        "gnorm_beta": gnorm,
        "iterations": len(trace),
        "e_alpha": e_alpha,
        "bound_ratio": e_alpha / bound_rhs if bound_rhs > 0 else float("inf"),
        "converged": True,
        "final_residual": trace.steps[-1].res_a1,
    }
    return u, result


def higher_regularity_audit(
    problem: NmhProblem,
    scale: BanachScalePair,
    cfg: NmhConfig,
    g,
    c: float,
    force: bool = False,
) -> dict:
    """Solve, then measure the solution one rung up the scale.

    Reports ||u||_{E_{alpha+c}} / ||g||_{F_{beta+c}} and the data condition
    constant at beta+c; no quantitative assertion is made, the ratio is for
    cross-parameter comparison (stability across eps).
    """
    u, result = nmh_solve(problem, scale, cfg, g, force=force)
    g_hi = scale.f_norm(g, cfg.beta + c)
    a_hi = 0.0
    if g_hi > 0:
        total = sum(
            scale.f_norm(scale.block_f(g, j), cfg.beta + c) ** 2 for j in range(scale.block_count)
        )
        a_hi = math.sqrt(total) / g_hi
    e_hi = scale.e_norm(u, cfg.alpha + c)
    return {
        "e_alpha_plus_c": e_hi,
        "g_beta_plus_c": g_hi,
        "ratio": e_hi / g_hi if g_hi > 0 else 0.0,
        "A_c": a_hi,
        "solve_result": result,
        "c": c,
    }
