"""Littlewood-Paley projections, Besov and spacetime norms, and the measured
inequality machinery (Bernstein, commutator, product estimates).

Dyadic bands are indexed by the physical frequency |xi| ~ 2^k (cycles per unit
length, matching the exp(2 pi i x.xi) transform convention of `grid`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, PreconditionError, StructuralError
from . import grid as gr
from .grid import GridSpec, ScalarField, apply_multiplier, lebesgue_norm


class BumpProfile:
    """Smooth radial cutoff: 1 on [0, 1], 0 on [2, inf), strictly decreasing between.

    The transition is the standard smooth-step quotient
        m(r) = psi(2 - r) / (psi(2 - r) + psi(r - 1)),   psi(u) = exp(-1/u) for u > 0,
    which is C-infinity and monotone; this exact formula is the package-wide
    dyadic cutoff (projections, sector profiles, annulus cutoffs all reuse it).
    """

    lower = 1.0
    upper = 2.0

    @staticmethod
    def _psi(u):
        out = np.zeros_like(u)
        pos = u > 0
        with np.errstate(over="ignore"):
            out[pos] = np.exp(-1.0 / u[pos])
        return out

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        a = self._psi(self.upper - r)
        b = self._psi(r - self.lower)
        with np.errstate(invalid="ignore", divide="ignore"):
            vals = np.where(r <= self.lower, 1.0,
                            np.where(r >= self.upper, 0.0, a / (a + b)))
        return vals if vals.shape else float(vals)

    def eta(self, s):
        """Angle profile: 1 for s < 1/2, 0 for s > 1 (the cutoff rescaled by 2)."""
        return self(2.0 * np.asarray(s, dtype=float))


DEFAULT_BUMP = BumpProfile()


@dataclass(frozen=True)
class BandRange:
    """Dyadic indices k_min..k_max whose shells fit on the grid.

    2^{k_max+1} must clear the Nyquist limit N/(2L) and 2^{k_min} must be at
    least the lattice spacing 1/L, so that a field supported in the annulus
    [2^{k_min}, 2^{k_max}] is reproduced exactly by the telescoped projections.
    """

    k_min: int
    k_max: int

    def __post_init__(self):
        if self.k_min > self.k_max:
            raise ParameterError(f"empty band range {self.k_min}..{self.k_max}")

    def validate(self, grid: GridSpec) -> "BandRange":
        if not 2.0 ** (self.k_max + 1) < grid.N / (2.0 * grid.L):
            raise ParameterError(
                f"2^(k_max+1)={2.0**(self.k_max+1)} must stay below Nyquist {grid.N/(2*grid.L)}")
        if not 2.0 ** self.k_min >= 1.0 / grid.L:
            raise ParameterError(
                f"2^k_min={2.0**self.k_min} must be at least one lattice shell 1/L={1/grid.L}")
        return self

    @classmethod
    def widest(cls, grid: GridSpec) -> "BandRange":
        k_max = math.floor(math.log2(grid.N / (2.0 * grid.L))) - 1
        if 2.0 ** (k_max + 1) >= grid.N / (2.0 * grid.L):
            k_max -= 1
        k_min = math.ceil(math.log2(1.0 / grid.L))
        return cls(k_min, k_max).validate(grid)

    def __iter__(self):
        return iter(range(self.k_min, self.k_max + 1))

    def annulus(self) -> tuple:
        return 2.0 ** self.k_min, 2.0 ** self.k_max


# ---------------------------------------------------------------------------
# projection symbols

def leq_symbol(grid: GridSpec, k: int, bump: BumpProfile = DEFAULT_BUMP) -> np.ndarray:
    return np.asarray(bump(grid.xi_norm * 2.0 ** (-k)), dtype=np.complex128)


def band_symbol(grid: GridSpec, k: int, bump: BumpProfile = DEFAULT_BUMP) -> np.ndarray:
    return leq_symbol(grid, k, bump) - leq_symbol(grid, k - 1, bump)


def _check_band(grid: GridSpec, k: int, band_range: BandRange | None):
    br = band_range if band_range is not None else BandRange.widest(grid)
    if not br.k_min <= k <= br.k_max:
        raise ParameterError(f"band index k={k} outside representable range "
                             f"{br.k_min}..{br.k_max}")


def project_leq(f: ScalarField, k: int, bump=DEFAULT_BUMP, band_range=None) -> ScalarField:
    _check_band(f.grid, k, band_range)
    return apply_multiplier(f, leq_symbol(f.grid, k, bump))


def project_band(f: ScalarField, k: int, bump=DEFAULT_BUMP, band_range=None) -> ScalarField:
    _check_band(f.grid, k, band_range)
    return apply_multiplier(f, band_symbol(f.grid, k, bump))


def project_range(f: ScalarField, k1: int, k2: int, bump=DEFAULT_BUMP, band_range=None) -> ScalarField:
    """Telescoped sum of bands k1..k2: P_{<=k2} - P_{<=k1-1}."""
    _check_band(f.grid, k1, band_range)
    _check_band(f.grid, k2, band_range)
    sym = leq_symbol(f.grid, k2, bump) - leq_symbol(f.grid, k1 - 1, bump)
    return apply_multiplier(f, sym)


def restrict_annulus(f: ScalarField, r_lo: float, r_hi: float) -> ScalarField:
    """Hard frequency restriction to r_lo <= |xi| <= r_hi (sharp indicator symbol).

    Fields restricted to a BandRange's annulus(), where every telescoped
    projection symbol is exactly 1, are reproduced exactly by the band sums;
    tests pre-project their data this way so dyadic truncation is exact."""
    rad = f.grid.xi_norm
    return apply_multiplier(f, ((rad >= r_lo) & (rad <= r_hi)).astype(np.complex128))


def project_annulus(f: ScalarField, band_range: BandRange, bump=DEFAULT_BUMP) -> ScalarField:
    """Smooth restriction to the range's bands: P_{<=k_max} - P_{<=k_min-1}."""
    return project_range(f, band_range.k_min, band_range.k_max, bump, band_range)


# ---------------------------------------------------------------------------
# Besov norms

def besov_norm(f: ScalarField, p, q, r, band_range=None, bump=DEFAULT_BUMP,
               allow_decreasing=False, exclude_zero_mode=False) -> float:
    """(sum_k (2^{(n/p - n/q) k} ||P_k f||_p)^r)^{1/r} over the band range.

    ``allow_decreasing`` admits q < p (negative-regularity weights), which the
    spacetime nonlinearity norms need in low dimension.
    """
    if r not in (1, 2):
        raise ParameterError(f"Besov summability r={r} must be 1 or 2")
    if p > q and not allow_decreasing:
        raise ParameterError(f"Besov exponents need p <= q, got p={p}, q={q}")
    grid = f.grid
    scale = np.abs(f.freq_values).max()
    if scale > 0 and np.abs(f.freq_values.flat[0]) > gr.SUPPORT_TOL * scale:
        if not exclude_zero_mode:
            raise PreconditionError("besov_norm needs zero-mean data "
                                    "(or exclude_zero_mode=True)")
        F = f.freq_values.copy()
        F.flat[0] = 0.0
        f = f.with_values(F)
    br = band_range if band_range is not None else BandRange.widest(grid)
    n = grid.n
    total = 0.0
    for k in br:
        w = 2.0 ** ((n / p - n / q) * k)
        term = w * lebesgue_norm(project_band(f, k, bump, br), p)
        total += term if r == 1 else term ** 2
    return total if r == 1 else math.sqrt(total)


# ---------------------------------------------------------------------------
# spacetime fields

@dataclass(frozen=True, eq=False)
class SpacetimeField:
    """A field sampled on sorted time instants; quadrature is trapezoidal (order 2)."""

    times: np.ndarray
    slices: tuple
    quadrature: str = "trapezoid"
    quadrature_order: int = 2

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise StructuralError("time axis must be a nonempty 1-d array")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise StructuralError("time samples must be strictly increasing")
        sl = tuple(self.slices)
        if len(sl) != t.size:
            raise StructuralError("one slice per time instant required")
        grids = {s.grid for s in sl}
        if len(grids) > 1:
            raise StructuralError("all slices must share one grid")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "slices", sl)

    @property
    def grid(self) -> GridSpec:
        return self.slices[0].grid

    def map(self, fn) -> "SpacetimeField":
        return SpacetimeField(self.times, tuple(fn(s) for s in self.slices),
                              self.quadrature, self.quadrature_order)


def spacetime_norm(F: SpacetimeField, q_t, spatial_norm) -> float:
    """L^{q_t} in time (trapezoid quadrature; max for q_t = inf) of per-slice
    spatial norms.  ``spatial_norm`` maps one slice to a float."""
    vals = np.array([spatial_norm(s) for s in F.slices], dtype=float)
    if q_t == np.inf:
        return float(vals.max())
    if len(F.times) < 2:
        raise StructuralError("finite q_t needs at least 2 time samples")
    return float(np.trapezoid(vals ** q_t, F.times) ** (1.0 / q_t))


def time_derivative(F: SpacetimeField):
    """Centered finite differences on a uniform time grid.

    Returns (SpacetimeField on the interior instants, order), order 4 when at
    least 5 slices exist, else order 2.
    """
    t = F.times
    if len(t) < 3:
        raise StructuralError("time differencing needs at least 3 slices")
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-12):
        raise StructuralError("time differencing needs uniform sampling")
    h = float(dt[0])
    s = F.slices
    if len(t) >= 5:
        order = 4
        inner = range(2, len(t) - 2)
        derivs = [(s[i - 2] - 8.0 * s[i - 1] + 8.0 * s[i + 1] - s[i + 2]) * (1.0 / (12.0 * h))
                  for i in inner]
        times = t[2:-2]
    else:
        order = 2
        inner = range(1, len(t) - 1)
        derivs = [(s[i + 1] - s[i - 1]) * (1.0 / (2.0 * h)) for i in inner]
        times = t[1:-1]
    return SpacetimeField(times, tuple(derivs), F.quadrature, F.quadrature_order), order


# ---------------------------------------------------------------------------
# measured inequalities

def fit_loglog(x, y):
    """Least-squares slope of log(y) against log(x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ParameterError("log-log fit needs positive data")
    lx = np.log(x)
    if np.ptp(lx) == 0:
        raise ParameterError("log-log fit needs a nondegenerate abscissa range")
    return float(np.polyfit(lx, np.log(y), 1)[0])


def shell_support_defect(f: ScalarField, k: int, bump=DEFAULT_BUMP) -> float:
    """Relative L^2 mass of f outside the band-k symbol footprint."""
    outside = np.abs(band_symbol(f.grid, k, bump)) == 0.0
    F = f.freq_values
    num = np.sqrt(np.sum(np.abs(np.where(outside, F, 0.0)) ** 2))
    den = np.sqrt(np.sum(np.abs(F) ** 2))
    return float(num / den) if den > 0 else 0.0


def bernstein_ratio(f: ScalarField, k: int, p, q, bump=DEFAULT_BUMP) -> float:
    """||f||_q / (2^{n k (1/p - 1/q)} ||f||_p) for a shell-k supported field."""
    if p > q:
        raise ParameterError(f"Bernstein needs p <= q, got p={p}, q={q}")
    if shell_support_defect(f, k, bump) > 1e-8:
        raise PreconditionError(f"field is not supported in the |xi| ~ 2^{k} shell")
    n = f.grid.n
    qinv = 0.0 if q == np.inf else 1.0 / q
    pinv = 0.0 if p == np.inf else 1.0 / p
    return lebesgue_norm(f, q) / (2.0 ** (n * k * (pinv - qinv)) * lebesgue_norm(f, p))


def commutator_field(f: ScalarField, g: ScalarField, k: int, bump=DEFAULT_BUMP) -> ScalarField:
    """[P_k, f] g = P_k(f g) - f P_k(g), products taken pointwise."""
    fg = ScalarField(f.grid, f.phys_values * g.phys_values)
    return project_band(fg, k, bump) - ScalarField(
        f.grid, f.phys_values * project_band(g, k, bump).phys_values)


def commutator_ratio(f: ScalarField, g: ScalarField, k: int, p, q, r,
                     bump=DEFAULT_BUMP) -> float:
    """||[P_k,f] g||_r 2^k / (||grad f||_p ||g||_q) under the Hoelder triple."""
    pinv = 0.0 if p == np.inf else 1.0 / p
    qinv = 0.0 if q == np.inf else 1.0 / q
    rinv = 0.0 if r == np.inf else 1.0 / r
    if abs(pinv + qinv - rinv) > 1e-12:
        raise ParameterError(f"Hoelder triple violated: 1/{p} + 1/{q} != 1/{r}")
    comm = commutator_field(f, g, k, bump)
    den = gr.vector_lebesgue_norm(gr.gradient(f), p) * lebesgue_norm(g, q)
    num = lebesgue_norm(comm, r) * 2.0 ** k
    return num / den if den > 0 else 0.0


def _check_product_exponents(p, q, p1, q1, p2, q2):
    checks = [
        (1 <= p1 < q1 < np.inf, f"1 <= p1 < q1 < inf fails for p1={p1}, q1={q1}"),
        (1 <= p2 < q2 < np.inf, f"1 <= p2 < q2 < inf fails for p2={p2}, q2={q2}"),
        (1 <= p <= q < np.inf, f"1 <= p <= q < inf fails for p={p}, q={q}"),
        (abs(1.0 / q - 1.0 / q1 - 1.0 / q2) < 1e-12, f"1/q = 1/q1 + 1/q2 fails for q={q}"),
        (1.0 / p < 1.0 / p1 + 1.0 / q2 - 1e-15, f"1/p < 1/p1 + 1/q2 fails for p={p}"),
        (1.0 / p < 1.0 / q1 + 1.0 / p2 - 1e-15, f"1/p < 1/q1 + 1/p2 fails for p={p}"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ParameterError("product-estimate exponents: " + msg)


def product_ratio(f: ScalarField, g: ScalarField, p, q, p1, q1, p2, q2,
                  band_range=None, bump=DEFAULT_BUMP) -> float:
    """Measured ||fg||_{B[p,q],1} / (||f||_{B[p1,q1],2} ||g||_{B[p2,q2],2}); 0/0 -> 0."""
    _check_product_exponents(p, q, p1, q1, p2, q2)
    fg = ScalarField(f.grid, f.phys_values * g.phys_values)
    # products of zero-mean fields pick up a mean on the box; the homogeneous
    # norm is read on the mean-free part
    lhs = besov_norm(fg, p, q, 1, band_range, bump, exclude_zero_mode=True)
    rhs = besov_norm(f, p1, q1, 2, band_range, bump) * besov_norm(g, p2, q2, 2, band_range, bump)
    return lhs / rhs if rhs > 0 else 0.0


def spacetime_product_ratio(F: SpacetimeField, G: SpacetimeField, p, q,
                            band_range=None, bump=DEFAULT_BUMP) -> float:
    """Measured ratio for the spacetime bound

        ||FG||_{L1_t B[2,n/2],2} <~ ||F||_{L1_t B[inf,inf],1} ||G||_{Linf_t B[2,n/2],2}
                                   + ||F||_{L2_t B[p,2n],2}   ||G||_{L2_t B[q,2n/3],2}

    with 2 <= p < 2n, p <= 2n/(n-3), 2 <= q < 2n/3 (all checked; the q-window is
    empty below n = 4)."""
    n = F.grid.n
    checks = [
        (n > 3, f"spacetime product bound needs n > 3, got n={n}"),
        (2 <= p < 2 * n, f"2 <= p < 2n fails for p={p}"),
        (n <= 3 or p <= 2 * n / (n - 3), f"p <= 2n/(n-3) fails for p={p}"),
        (2 <= q < 2 * n / 3, f"2 <= q < 2n/3 fails for q={q}"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ParameterError("spacetime product exponents: " + msg)
    if not np.array_equal(F.times, G.times):
        raise StructuralError("spacetime factors must share the time axis")
    half = n / 2.0
    prod = SpacetimeField(F.times, tuple(
        ScalarField(F.grid, a.phys_values * b.phys_values)
        for a, b in zip(F.slices, G.slices)))
    bn = lambda pp, qq, rr: (lambda s: besov_norm(s, pp, qq, rr, band_range, bump,
                                                  allow_decreasing=True,
                                                  exclude_zero_mode=True))
    lhs = spacetime_norm(prod, 1, bn(2, half, 2))
    rhs = (spacetime_norm(F, 1, bn(np.inf, np.inf, 1)) * spacetime_norm(G, np.inf, bn(2, half, 2))
           + spacetime_norm(F, 2, bn(p, 2 * n, 2)) * spacetime_norm(G, 2, bn(q, 2 * n / 3, 2)))
    return lhs / rhs if rhs > 0 else 0.0
