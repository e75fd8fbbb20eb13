"""Periodic-box sampled fields and the spectral calculus everything else builds on.

Conventions.  The box is [0, L)^n sampled at N points per axis, x_j = j*L/N.
The forward transform is the Riemann-sum approximation of
``f_hat(xi) = integral exp(-2 pi i x.xi) f(x) dx``, i.e. ``fftn(values) * dx**n``,
living on the frequency lattice xi in (1/L)*{-N/2, ..., N/2-1}^n (numpy fft
layout).  A lattice plane wave exp(2 pi i x.xi0) therefore maps to a single
coefficient of value L^n, and Plancherel holds exactly:

    sum |f|^2 dx^n  ==  sum |f_hat|^2 / L^n.

The Nyquist rows (index N/2 along any axis) are not closed under negation and
are forced to zero by every multiplier applied here.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .errors import ParameterError, PreconditionError, SingularSymbolError, StructuralError

PHYSICAL = "physical"
FREQUENCY = "frequency"

# relative magnitude below which a frequency coefficient counts as "not present"
SUPPORT_TOL = 1e-13


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the periodic box: dimension n, points per axis N, side L."""

    n: int
    N: int
    L: float

    def __post_init__(self):
        if not 2 <= self.n <= 6:
            raise ParameterError(f"dimension n={self.n} outside the supported range 2..6")
        if self.N < 8 or self.N & (self.N - 1) != 0:
            raise ParameterError(f"N={self.N} must be a power of two >= 8")
        if not self.L > 0:
            raise ParameterError(f"box side L={self.L} must be positive")

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.n

    @property
    def num_points(self) -> int:
        return self.N ** self.n

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.n

    @property
    def nyquist(self) -> float:
        """Largest representable |xi_j| along one axis, (N/2 - 1)/L."""
        return (self.N // 2 - 1) / self.L

    @cached_property
    def freq_1d(self) -> np.ndarray:
        return np.fft.fftfreq(self.N, d=self.dx)  # integer modes / L

    @cached_property
    def xi(self) -> np.ndarray:
        """Frequency lattice coordinates, stacked: shape (n,) + shape."""
        axes = np.meshgrid(*([self.freq_1d] * self.n), indexing="ij")
        out = np.stack(axes)
        out.flags.writeable = False
        return out

    @cached_property
    def xi_norm(self) -> np.ndarray:
        out = np.sqrt((self.xi ** 2).sum(axis=0))
        out.flags.writeable = False
        return out

    @cached_property
    def x(self) -> np.ndarray:
        """Physical sample coordinates, stacked: shape (n,) + shape."""
        ax = np.arange(self.N) * self.dx
        out = np.stack(np.meshgrid(*([ax] * self.n), indexing="ij"))
        out.flags.writeable = False
        return out

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """Boolean array, True on lattice points with any axis at the Nyquist index."""
        mask = np.zeros(self.shape, dtype=bool)
        half = self.N // 2
        for axis in range(self.n):
            sl = [slice(None)] * self.n
            sl[axis] = half
            mask[tuple(sl)] = True
        mask.flags.writeable = False
        return mask

    def mode_index(self, mode) -> tuple:
        """Array index of the integer mode m (frequency m/L); negative m allowed."""
        if len(mode) != self.n:
            raise StructuralError(f"mode {mode} has wrong length for n={self.n}")
        idx = tuple(int(m) % self.N for m in mode)
        return idx

    def mode_frequency(self, mode) -> np.ndarray:
        return np.asarray(mode, dtype=float) / self.L


def _as_complex(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.complex128)
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    """A sampled complex field on a GridSpec, in physical or frequency representation.

    Fields are immutable values: the sample array is marked read-only at
    construction and every operation returns a new field.
    """

    grid: GridSpec
    values: np.ndarray
    rep: str = PHYSICAL
    time_tag: float | None = None
    real_valued: bool = False

    def __post_init__(self):
        arr = _as_complex(self.values)
        if arr.shape != self.grid.shape:
            raise StructuralError(
                f"field shape {arr.shape} does not match grid shape {self.grid.shape}")
        if self.rep not in (PHYSICAL, FREQUENCY):
            raise StructuralError(f"unknown representation {self.rep!r}")
        if arr is self.values:
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    def with_values(self, values, rep=None, real_valued=None) -> "ScalarField":
        return ScalarField(self.grid, values,
                           rep=self.rep if rep is None else rep,
                           time_tag=self.time_tag,
                           real_valued=self.real_valued if real_valued is None else real_valued)

    def at_time(self, t) -> "ScalarField":
        return replace(self, time_tag=t)

    def in_frequency(self) -> "ScalarField":
        return self if self.rep == FREQUENCY else to_frequency(self)

    def in_physical(self) -> "ScalarField":
        return self if self.rep == PHYSICAL else to_physical(self)

    @property
    def freq_values(self) -> np.ndarray:
        return self.in_frequency().values

    @property
    def phys_values(self) -> np.ndarray:
        return self.in_physical().values

    def mean(self) -> complex:
        return complex(self.phys_values.mean())

    def conjugation_defect(self) -> float:
        """Max deviation of the frequency data from conjugate symmetry, relative."""
        F = self.freq_values
        G = _reflect(F)
        scale = np.abs(F).max()
        if scale == 0.0:
            return 0.0
        return float(np.abs(F - np.conj(G)).max() / scale)

    def __add__(self, other):
        other = _match(self, other)
        return self.with_values(self.values + other.values, real_valued=False)

    def __sub__(self, other):
        other = _match(self, other)
        return self.with_values(self.values - other.values, real_valued=False)

    def __mul__(self, scalar):
        return self.with_values(self.values * scalar, real_valued=False)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def _match(f: ScalarField, g: ScalarField) -> ScalarField:
    if not isinstance(g, ScalarField):
        raise StructuralError("expected a ScalarField operand")
    if g.grid != f.grid:
        raise StructuralError("fields live on different grids")
    return g.in_frequency() if f.rep == FREQUENCY else g.in_physical()


def _reflect(F: np.ndarray) -> np.ndarray:
    """F evaluated at -xi (index map m -> -m mod N along every axis)."""
    idx = (-np.arange(F.shape[0])) % F.shape[0]
    out = F
    for axis in range(F.ndim):
        out = np.take(out, idx, axis=axis)
    return out


@dataclass(frozen=True, eq=False)
class VectorField:
    """n ScalarFields on one grid; divergence_free is a caller-checked certificate."""

    components: tuple
    divergence_free: bool = False

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise StructuralError("vector field needs at least one component")
        grid = comps[0].grid
        if len(comps) != grid.n:
            raise StructuralError(f"expected {grid.n} components, got {len(comps)}")
        for c in comps:
            if c.grid != grid:
                raise StructuralError("vector components live on different grids")
        object.__setattr__(self, "components", comps)

    @property
    def grid(self) -> GridSpec:
        return self.components[0].grid

    def in_frequency(self) -> "VectorField":
        return VectorField(tuple(c.in_frequency() for c in self.components),
                           divergence_free=self.divergence_free)

    def in_physical(self) -> "VectorField":
        return VectorField(tuple(c.in_physical() for c in self.components),
                           divergence_free=self.divergence_free)

    def map(self, fn, divergence_free=False) -> "VectorField":
        return VectorField(tuple(fn(c) for c in self.components), divergence_free=divergence_free)

    def dot(self, omega) -> ScalarField:
        """Pointwise dot product with a constant vector."""
        omega = np.asarray(omega, dtype=float)
        acc = self.components[0] * omega[0]
        for j in range(1, len(self.components)):
            acc = acc + self.components[j] * omega[j]
        return acc

    def __add__(self, other):
        return VectorField(tuple(a + b for a, b in zip(self.components, other.components)))

    def __sub__(self, other):
        return VectorField(tuple(a - b for a, b in zip(self.components, other.components)))

    def __mul__(self, scalar):
        return VectorField(tuple(c * scalar for c in self.components))

    __rmul__ = __mul__

    def verify_divergence_free(self, tol=1e-10) -> bool:
        dv = lebesgue_norm(divergence(self), np.inf)
        scale = max(lebesgue_norm(c, np.inf) for c in gradient_magnitude_components(self))
        return dv <= tol * max(scale, 1e-300)


def gradient_magnitude_components(V: VectorField):
    comps = []
    for c in V.components:
        comps.extend(gradient(c).components)
    return comps


# ---------------------------------------------------------------------------
# transforms

def to_frequency(f: ScalarField) -> ScalarField:
    """Riemann-sum Fourier transform: fftn(values) * dx^n."""
    if f.rep != PHYSICAL:
        raise StructuralError("to_frequency expects a physical-representation field")
    F = np.fft.fftn(f.values) * f.grid.cell_volume
    return ScalarField(f.grid, F, rep=FREQUENCY, time_tag=f.time_tag, real_valued=f.real_valued)


def to_physical(f: ScalarField) -> ScalarField:
    """Inverse transform: the Riemann synthesis sum with d(xi) = 1/L^n per mode."""
    if f.rep != FREQUENCY:
        raise StructuralError("to_physical expects a frequency-representation field")
    v = np.fft.ifftn(f.values) / f.grid.cell_volume
    return ScalarField(f.grid, v, rep=PHYSICAL, time_tag=f.time_tag, real_valued=f.real_valued)


# ---------------------------------------------------------------------------
# multipliers

def evaluate_symbol(grid: GridSpec, symbol) -> np.ndarray:
    """Evaluate a multiplier symbol on the frequency lattice.

    ``symbol`` is either an ndarray of shape grid.shape or a callable taking the
    stacked coordinate array grid.xi (shape (n,) + grid.shape).
    """
    sym = symbol(grid.xi) if callable(symbol) else np.asarray(symbol)
    sym = np.asarray(sym, dtype=np.complex128) + np.zeros(grid.shape, dtype=np.complex128)
    if sym.shape != grid.shape:
        raise StructuralError(f"symbol shape {sym.shape} does not match grid {grid.shape}")
    return sym


def apply_multiplier(f: ScalarField, symbol) -> ScalarField:
    """f_hat -> m(xi) f_hat, with the Nyquist rows forced to zero.

    A non-finite symbol value on a lattice point whose coefficient is nonzero
    (relative to the field's peak) raises SingularSymbolError naming the point.
    """
    grid = f.grid
    sym = evaluate_symbol(grid, symbol)
    F = f.freq_values
    bad = ~np.isfinite(sym)
    if bad.any():
        scale = np.abs(F).max()
        hit = bad & (np.abs(F) > SUPPORT_TOL * scale)
        if hit.any():
            where = np.argwhere(hit)[0]
            mode = tuple(int(m) if m <= grid.N // 2 else int(m) - grid.N for m in where)
            raise SingularSymbolError(
                f"symbol is not finite at lattice mode {mode} (xi={tuple(np.asarray(mode)/grid.L)}) "
                "which carries a nonzero coefficient")
        sym = np.where(bad, 0.0, sym)
    G = sym * F
    G = np.where(grid.nyquist_mask, 0.0, G)
    out = ScalarField(grid, G, rep=FREQUENCY, time_tag=f.time_tag)
    return out if f.rep == FREQUENCY else to_physical(out)


def radial_symbol(grid: GridSpec, profile) -> np.ndarray:
    """Symbol depending only on |xi|."""
    return np.asarray(profile(grid.xi_norm), dtype=np.complex128)


# ---------------------------------------------------------------------------
# derivatives

def derivative_symbol(grid: GridSpec, axis: int) -> np.ndarray:
    return 2j * np.pi * grid.xi[axis]


def partial_derivative(f: ScalarField, axis: int) -> ScalarField:
    return apply_multiplier(f, derivative_symbol(f.grid, axis))


def gradient(f: ScalarField) -> VectorField:
    return VectorField(tuple(partial_derivative(f, j) for j in range(f.grid.n)))


def laplacian(f: ScalarField) -> ScalarField:
    return apply_multiplier(f, -4.0 * np.pi ** 2 * f.grid.xi_norm ** 2)


def divergence(V: VectorField) -> ScalarField:
    acc = partial_derivative(V.components[0], 0)
    for j in range(1, V.grid.n):
        acc = acc + partial_derivative(V.components[j], j)
    return acc


def inverse_laplacian(f: ScalarField) -> ScalarField:
    """Delta^{-1} with the zero mode mapped to zero (zero-mean data expected)."""
    grid = f.grid
    with np.errstate(divide="ignore"):
        sym = -1.0 / (4.0 * np.pi ** 2 * grid.xi_norm ** 2)
    sym.flat[0] = 0.0
    return apply_multiplier(f, sym)


# ---------------------------------------------------------------------------
# norms and inner products

def lebesgue_norm(f: ScalarField, p) -> float:
    """(sum |f|^p dx^n)^{1/p}; max for p = inf."""
    v = np.abs(f.phys_values)
    if p == np.inf:
        return float(v.max())
    if not p >= 1:
        raise ParameterError(f"Lebesgue exponent p={p} must satisfy p >= 1")
    return float((np.sum(v ** p) * f.grid.cell_volume) ** (1.0 / p))


def vector_lebesgue_norm(V: VectorField, p) -> float:
    """L^p norm of the pointwise euclidean magnitude of V."""
    mag = np.sqrt(sum(np.abs(c.phys_values) ** 2 for c in V.components))
    if p == np.inf:
        return float(mag.max())
    return float((np.sum(mag ** p) * V.grid.cell_volume) ** (1.0 / p))


def frequency_l2(grid: GridSpec, F: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(F) ** 2) / grid.L ** grid.n))


def sobolev_norm(f: ScalarField, s: float, homogeneous: bool = True,
                 exclude_zero_mode: bool = False) -> float:
    """Homogeneous |2 pi xi|^s or inhomogeneous <2 pi xi>^s weighted L^2 norm."""
    grid = f.grid
    F = f.freq_values
    if homogeneous:
        scale = np.abs(F).max()
        if not exclude_zero_mode and scale > 0 and np.abs(F.flat[0]) > SUPPORT_TOL * scale:
            raise PreconditionError(
                "homogeneous Sobolev norm needs zero-mean data "
                "(or exclude_zero_mode=True)")
        with np.errstate(divide="ignore"):
            w = (2.0 * np.pi * grid.xi_norm) ** s
        w.flat[0] = 0.0
    else:
        w = (1.0 + 4.0 * np.pi ** 2 * grid.xi_norm ** 2) ** (s / 2.0)
    return frequency_l2(grid, w * F)


def inner_product(f: ScalarField, g: ScalarField) -> complex:
    """<f, g> = sum f conj(g) dx^n."""
    if f.grid != g.grid:
        raise StructuralError("fields live on different grids")
    return complex(np.sum(f.phys_values * np.conj(g.phys_values)) * f.grid.cell_volume)


def relative_l2_difference(f: ScalarField, g: ScalarField) -> float:
    num = lebesgue_norm(f - g, 2)
    den = max(lebesgue_norm(f, 2), lebesgue_norm(g, 2))
    return num / den if den > 0 else 0.0


# ---------------------------------------------------------------------------
# constructors used throughout the tests and the harness

def constant_field(grid: GridSpec, value=1.0) -> ScalarField:
    return ScalarField(grid, np.full(grid.shape, value, dtype=np.complex128),
                       real_valued=float(np.imag(value)) == 0.0)


def zero_field(grid: GridSpec, rep=PHYSICAL) -> ScalarField:
    return ScalarField(grid, np.zeros(grid.shape, dtype=np.complex128), rep=rep, real_valued=True)


def plane_wave(grid: GridSpec, mode) -> ScalarField:
    """exp(2 pi i x . xi0) for the lattice frequency xi0 = mode / L."""
    xi0 = grid.mode_frequency(mode)
    phase = np.tensordot(xi0, grid.x, axes=(0, 0))
    return ScalarField(grid, np.exp(2j * np.pi * phase))


def mode_field(grid: GridSpec, mode, coefficient=None) -> ScalarField:
    """Frequency-side delta: a single coefficient (default L^n, the plane-wave value)."""
    F = np.zeros(grid.shape, dtype=np.complex128)
    F[grid.mode_index(mode)] = grid.L ** grid.n if coefficient is None else coefficient
    return ScalarField(grid, F, rep=FREQUENCY)


def hermitianize(grid: GridSpec, F: np.ndarray) -> np.ndarray:
    """Project frequency data onto the conjugate-symmetric (real-field) part."""
    return 0.5 * (F + np.conj(_reflect(F)))
