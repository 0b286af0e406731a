"""Spectral fields on a periodic box with semiclassical Sobolev calculus.

Grid/lattice conventions, fixed once and used everywhere:

* physical box [-L/2, L/2)^d sampled at n points per axis, x_i = -L/2 + i L/n;
* frequency lattice xi = (2 pi / L) m with integer m in numpy FFT order
  (the Nyquist index -n/2 maps to itself under m -> -m mod n);
* stored coefficients are Fourier-series coefficients scaled by L^{d/2}, so
  discrete Parseval is exact: sum |coef|^2 == integral |u|^2 dx for
  band-limited u.  H^0 coincides with L^2 by construction.

The semiclassical parameter eps is dyadic (2^{-k}); all dyadic frequency
thresholds are expressed in eps|xi|, which keeps smoothing constants
eps-independent.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field as dc_field

import numpy as np

__all__ = [
    "SemiclassicalContext",
    "SpectralField",
    "NormTag",
    "LatticeOverflow",
    "make_context",
    "norm",
    "hs_norm",
    "linf_norm",
    "w_norm",
    "smooth",
    "dyadic_block",
    "block_count",
    "plain_hs_norm",
    "plain_smooth",
    "plain_block",
    "plain_block_count",
    "block_weight_bound",
    "smoothing_weight_bound",
    "tail_weight_bound",
    "rescale",
    "reflect_conj",
    "conjugate_pair_residual",
    "make_conjugate_pair",
    "random_band_limited",
    "save_field",
    "load_field",
]


class LatticeOverflow(ValueError):
    """Raised when an operation needs modes outside the frequency lattice."""


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SemiclassicalContext:
    """Discretization context: box, resolution and semiclassical parameter.

    Parameters
    ----------
    d : int
        Space dimension, 1 or 2.
    L : float
        Box side length.
    n : int
        Points per axis, a power of two.
    eps : float
        Semiclassical parameter, dyadic in (0, 1].
    """

    d: int
    L: float
    n: int
    eps: float
    _cache: dict = dc_field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"d must be 1 or 2, got {self.d}")
        if self.L <= 0:
            raise ValueError(f"box length must be positive, got {self.L}")
        if not _is_power_of_two(self.n):
            raise ValueError(f"n must be a power of two, got {self.n}")
        if not (0.0 < self.eps <= 1.0):
            raise ValueError(f"eps must lie in (0, 1], got {self.eps}")
        k = -np.log2(self.eps)
        if abs(k - round(k)) > 1e-12:
            raise ValueError(f"eps must be dyadic 2^-k, got {self.eps}")

    # cached lattice arrays ------------------------------------------------

    def _cached(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def mode_axis(self) -> np.ndarray:
        """Integer mode numbers along one axis, FFT order."""
        return self._cached("modes", lambda: np.rint(np.fft.fftfreq(self.n) * self.n).astype(int))

    @property
    def x_axis(self) -> np.ndarray:
        return self._cached("x", lambda: -self.L / 2 + self.dx * np.arange(self.n))

    def x_grids(self) -> tuple:
        ax = self.x_axis
        if self.d == 1:
            return (ax,)
        return tuple(np.meshgrid(ax, ax, indexing="ij"))

    @property
    def xi_axis(self) -> np.ndarray:
        return self._cached("xi", lambda: (2 * np.pi / self.L) * self.mode_axis)

    def xi_grids(self) -> tuple:
        """Frequency component arrays broadcast to the full lattice shape."""

        def build():
            ax = self.xi_axis
            if self.d == 1:
                return (ax,)
            return tuple(np.meshgrid(ax, ax, indexing="ij"))

        return self._cached("xi_grids", build)

    @property
    def xi_sq(self) -> np.ndarray:
        return self._cached("xi_sq", lambda: sum(g**2 for g in self.xi_grids()))

    @property
    def eps_abs_xi(self) -> np.ndarray:
        """eps |xi| on the lattice; all dyadic cutoffs act on this array."""
        return self._cached("eaxi", lambda: self.eps * np.sqrt(self.xi_sq))

    @property
    def checkerboard(self) -> np.ndarray:
        # phase e^{-i xi . x_0} with x_0 = (-L/2, ...): (-1)^{sum m_a}
        def build():
            s = np.where(self.mode_axis % 2 == 0, 1.0, -1.0)
            out = s
            for _ in range(self.d - 1):
                out = np.multiply.outer(out, s)
            return out

        return self._cached("checker", build)

    @property
    def dealias_mask(self) -> np.ndarray:
        """Two-thirds rule mask: keep |m_a| < n/3 along every axis."""

        def build():
            keep = np.abs(self.mode_axis) < self.n / 3
            out = keep
            for _ in range(self.d - 1):
                out = np.logical_and.outer(out, keep)
            return out

        return self._cached("dealias", build)

    def sobolev_weight(self, s: float) -> np.ndarray:
        key = ("w", float(s))
        return self._cached(key, lambda: (1.0 + self.eps_abs_xi**2) ** (s / 2.0))

    # transforms -----------------------------------------------------------

    def to_coef(self, samples: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.d, 0))
        f = np.fft.fftn(samples, axes=axes)
        return f * (self.checkerboard * (self.L ** (self.d / 2) / self.n**self.d))

    def to_grid(self, coef: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.d, 0))
        return np.fft.ifftn(coef * self.checkerboard, axes=axes) * (
            self.n**self.d / self.L ** (self.d / 2)
        )

    def compatible(self, other: "SemiclassicalContext") -> bool:
        return (
            self.d == other.d
            and self.n == other.n
            and abs(self.L - other.L) < 1e-12 * self.L
            and self.eps == other.eps
        )


def make_context(d: int, L: float, n: int, eps: float) -> SemiclassicalContext:
    return SemiclassicalContext(d=d, L=float(L), n=int(n), eps=float(eps))


@dataclass
class SpectralField:
    """A 2N-component (or general multi-component) field stored spectrally.

    ``coef`` has shape (ncomp, n) in 1d or (ncomp, n, n) in 2d, complex,
    numpy FFT mode order along each frequency axis.
    """

    ctx: SemiclassicalContext
    coef: np.ndarray

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=complex)
        if self.coef.ndim == self.ctx.d:
            self.coef = self.coef[None]
        if self.coef.shape[1:] != self.ctx.shape:
            raise ValueError(
                f"coefficient shape {self.coef.shape} does not match context {self.ctx.shape}"
            )

    @property
    def ncomp(self) -> int:
        return self.coef.shape[0]

    def grid(self) -> np.ndarray:
        return self.ctx.to_grid(self.coef)

    @classmethod
    def from_grid(cls, ctx: SemiclassicalContext, samples: np.ndarray) -> "SpectralField":
        samples = np.asarray(samples, dtype=complex)
        if samples.ndim == ctx.d:
            samples = samples[None]
        return cls(ctx, ctx.to_coef(samples))

    def copy(self) -> "SpectralField":
        return SpectralField(self.ctx, self.coef.copy())

    def component(self, j: int) -> "SpectralField":
        return SpectralField(self.ctx, self.coef[j : j + 1].copy())

    # vector-space operations (needed by the iteration engine)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.ctx, self.coef + other.coef)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.ctx, self.coef - other.coef)

    def __mul__(self, a) -> "SpectralField":
        return SpectralField(self.ctx, self.coef * a)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.ctx, -self.coef)

    @classmethod
    def zero(cls, ctx: SemiclassicalContext, ncomp: int) -> "SpectralField":
        return cls(ctx, np.zeros((ncomp,) + ctx.shape, dtype=complex))


@dataclass(frozen=True)
class NormTag:
    """Identifies a norm: kind in {'L2', 'Hs_eps', 'Linf', 'Wm_inf_eps',
    'C0Hs', 'C1Hs'}; s is the Sobolev index, m the derivative count."""

    kind: str
    s: float | None = None
    m: int | None = None

    _KINDS = ("L2", "Hs_eps", "Linf", "Wm_inf_eps", "C0Hs", "C1Hs")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.kind in ("Hs_eps", "C0Hs", "C1Hs") and self.s is None:
            raise ValueError(f"{self.kind} needs a Sobolev index s")
        if self.kind == "Wm_inf_eps":
            if self.m is None:
                raise ValueError("Wm_inf_eps needs a derivative count m")
            if self.m < 0:
                raise ValueError("derivative count m must be >= 0")


def hs_norm(field: SpectralField, s: float) -> float:
    w = field.ctx.sobolev_weight(s)
    return float(np.sqrt(np.sum(np.abs(w * field.coef) ** 2)))


def plain_hs_norm(field: SpectralField, s: float) -> float:
    """Standard Sobolev norm, weight (1+|xi|^2)^{s/2} regardless of ctx.eps."""
    ctx = field.ctx
    w = ctx._cached(("wp", float(s)), lambda: (1.0 + ctx.xi_sq) ** (s / 2.0))
    return float(np.sqrt(np.sum(np.abs(w * field.coef) ** 2)))


def _vector_modulus(grid_vals: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(grid_vals) ** 2, axis=0))


def linf_norm(field: SpectralField) -> float:
    return float(np.max(_vector_modulus(field.grid())))


def _multi_indices(d: int, max_order: int):
    for alpha in itertools.product(range(max_order + 1), repeat=d):
        if sum(alpha) <= max_order:
            yield alpha


def derivative(field: SpectralField, alpha) -> SpectralField:
    """Spectral partial derivative d^alpha (alpha a multi-index)."""
    mult = np.ones(field.ctx.shape, dtype=complex)
    for ax, a in enumerate(alpha):
        if a:
            mult = mult * (1j * field.ctx.xi_grids()[ax]) ** a
    return SpectralField(field.ctx, field.coef * mult)


def w_norm(field: SpectralField, m: int) -> float:
    """Semiclassically weighted W^{m,inf} norm: sum over |alpha| <= m of
    eps^{|alpha|} max |d^alpha u|."""
    total = 0.0
    for alpha in _multi_indices(field.ctx.d, m):
        g = derivative(field, alpha).grid()
        total += field.ctx.eps ** sum(alpha) * float(np.max(_vector_modulus(g)))
    return total


def norm(field: SpectralField, tag: NormTag) -> float:
    if not np.all(np.isfinite(field.coef)):
        raise ValueError("field has non-finite coefficients")
    if tag.kind == "L2":
        return hs_norm(field, 0.0)
    if tag.kind == "Hs_eps":
        return hs_norm(field, tag.s)
    if tag.kind == "Linf":
        return linf_norm(field)
    if tag.kind == "Wm_inf_eps":
        return w_norm(field, tag.m)
    raise TypeError(f"{tag.kind} is a trajectory norm; use TrajectoryField.norm")


# -- smoothing operators and dyadic blocks ---------------------------------


def smooth(field: SpectralField, j: int) -> SpectralField:
    """Sharp truncation S_j: keep modes with eps|xi| <= 2^j."""
    mask = field.ctx.eps_abs_xi <= 2.0**j
    return SpectralField(field.ctx, field.coef * mask)


def dyadic_block(field: SpectralField, j: int) -> SpectralField:
    """Block R_0 = S_1, R_j = S_{j+1} - S_j (annulus 2^j < eps|xi| <= 2^{j+1})."""
    t = field.ctx.eps_abs_xi
    if j == 0:
        mask = t <= 2.0
    else:
        mask = (t > 2.0**j) & (t <= 2.0 ** (j + 1))
    return SpectralField(field.ctx, field.coef * mask)


def block_count(ctx: SemiclassicalContext) -> int:
    """Number of dyadic blocks covering the whole lattice."""
    tmax = float(np.max(ctx.eps_abs_xi))
    if tmax <= 2.0:
        return 1
    return int(np.ceil(np.log2(tmax) - 1e-12))


def plain_smooth(field: SpectralField, j: int) -> SpectralField:
    """Truncation at |xi| <= 2^j (unit scale, independent of ctx.eps)."""
    mask = np.sqrt(field.ctx.xi_sq) <= 2.0**j
    return SpectralField(field.ctx, field.coef * mask)


def plain_block(field: SpectralField, j: int) -> SpectralField:
    t = np.sqrt(field.ctx.xi_sq)
    if j == 0:
        mask = t <= 2.0
    else:
        mask = (t > 2.0**j) & (t <= 2.0 ** (j + 1))
    return SpectralField(field.ctx, field.coef * mask)


def plain_block_count(ctx: SemiclassicalContext) -> int:
    tmax = float(np.sqrt(np.max(ctx.xi_sq)))
    if tmax <= 2.0:
        return 1
    return int(np.ceil(np.log2(tmax) - 1e-12))


def _mask_weight_ratio(ctx, mask, a, b) -> float:
    # sharp lattice constant: max over kept modes of H^b/H^a weight ratio
    t = ctx.eps_abs_xi[mask]
    if t.size == 0:
        return 0.0
    return float(np.max((1.0 + t**2) ** ((b - a) / 2.0)))


def smoothing_weight_bound(ctx: SemiclassicalContext, j: int, a: float, b: float) -> float:
    """Exact constant in ||S_j u||_{H^b} <= const ||S_j u||_{H^a} (b >= a)."""
    return _mask_weight_ratio(ctx, ctx.eps_abs_xi <= 2.0**j, a, b)

def tail_weight_bound(ctx: SemiclassicalContext, j: int, a: float, b: float) -> float:
    """Exact constant in ||(I-S_j) u||_{H^b} <= const ||(I-S_j) u||_{H^a} (b <= a)."""
    return _mask_weight_ratio(ctx, ctx.eps_abs_xi > 2.0**j, a, b)


def block_weight_bound(ctx: SemiclassicalContext, j: int, a: float, b: float) -> float:
    """Exact constant in ||R_j u||_{H^b} <= const ||R_j u||_{H^a}."""
    t = ctx.eps_abs_xi
    mask = (t <= 2.0) if j == 0 else ((t > 2.0**j) & (t <= 2.0 ** (j + 1)))
    return _mask_weight_ratio(ctx, mask, a, b)


# -- rescaling between semiclassical and unit contexts ---------------------


def rescale(field: SpectralField, direction: str, eps: float | None = None) -> SpectralField:
    """Exact change of scale u(x) <-> u(eps x).

    direction 'to_unit': from a context (L, eps) to (L/eps, 1); the integer
    mode indices are unchanged (both lattices are dyadically commensurate) and
    the coefficients pick up eps^{-d/2}, which makes
    ||u||_{H^s_eps} = eps^{d/2} ||rescale(u)||_{H^s} an identity.
    direction 'from_unit': inverse; requires the target eps.
    """
    ctx = field.ctx
    if direction == "to_unit":
        e = ctx.eps
        new_ctx = make_context(ctx.d, ctx.L / e, ctx.n, 1.0)
        return SpectralField(new_ctx, field.coef * e ** (-ctx.d / 2))
    if direction == "from_unit":
        if ctx.eps != 1.0:
            raise ValueError("from_unit expects a unit-scale context")
        if eps is None:
            raise ValueError("from_unit needs the target eps")
        new_ctx = make_context(ctx.d, ctx.L * eps, ctx.n, eps)
        return SpectralField(new_ctx, field.coef * eps ** (ctx.d / 2))
    raise ValueError(f"direction must be 'to_unit' or 'from_unit', got {direction!r}")


# -- conjugate-pair structure ----------------------------------------------


def _reflect(arr: np.ndarray, d: int) -> np.ndarray:
    # index map m -> -m mod n along each frequency axis
    for ax in range(-d, 0):
        arr = np.roll(np.flip(arr, axis=ax), 1, axis=ax)
    return arr


def reflect_conj(ctx: SemiclassicalContext, coef: np.ndarray) -> np.ndarray:
    """Coefficients of the complex conjugate: conj(u)^(xi) = conj(u^(-xi))."""
    return np.conj(_reflect(coef, ctx.d))


def make_conjugate_pair(field: SpectralField) -> SpectralField:
    """Stack (v, conj v): components j+N are the conjugates of components j."""
    return SpectralField(
        field.ctx, np.concatenate([field.coef, reflect_conj(field.ctx, field.coef)])
    )


def conjugate_pair_residual(field: SpectralField) -> float:
    """Max deviation from the pair structure, relative to the field size."""
    if field.ncomp % 2:
        raise ValueError("conjugate-pair fields need an even component count")
    nhalf = field.ncomp // 2
    expected = reflect_conj(field.ctx, field.coef[:nhalf])
    scale = float(np.max(np.abs(field.coef))) or 1.0
    return float(np.max(np.abs(field.coef[nhalf:] - expected))) / scale


# -- utilities ---------------------------------------------------------------


def random_band_limited(
    ctx: SemiclassicalContext,
    ncomp: int,
    kmax: int,
    rng: np.random.Generator,
    decay: float = 0.0,
    conjugate_pair: bool = False,
) -> SpectralField:
    """Random field with modes confined to |m_a| <= kmax along each axis.

    decay > 0 damps amplitudes like (1+|xi|^2)^{-decay/2}.  With
    conjugate_pair=True, ncomp counts the v-components and the result has
    2*ncomp components in conjugate-pair form.
    """
    shape = (ncomp,) + ctx.shape
    coef = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    keep = np.abs(ctx.mode_axis) <= kmax
    mask = keep
    for _ in range(ctx.d - 1):
        mask = np.logical_and.outer(mask, keep)
    coef *= mask
    if decay:
        coef *= (1.0 + ctx.xi_sq) ** (-decay / 2.0)
    f = SpectralField(ctx, coef)
    return make_conjugate_pair(f) if conjugate_pair else f


FIELD_FORMAT = "sfld-1"


def save_field(field: SpectralField, path) -> None:
    header = {
        "format": FIELD_FORMAT,
        "d": field.ctx.d,
        "L": field.ctx.L,
        "n": field.ctx.n,
        "eps": field.ctx.eps,
        "ncomp": field.ncomp,
    }
    np.savez(path, header=json.dumps(header), coef=field.coef)


def load_field(path) -> SpectralField:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != FIELD_FORMAT:
            raise ValueError(f"unsupported field format {header.get('format')!r}")
        ctx = make_context(header["d"], header["L"], header["n"], header["eps"])
        return SpectralField(ctx, data["coef"])
