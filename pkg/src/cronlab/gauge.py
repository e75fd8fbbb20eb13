"""Gauge-theoretic and microlocal operators: Leray projection, curvature and
covariant derivatives, sector projections about a direction, the transverse
Laplacian and its inverse, null derivatives, and the divergence-free angular
gain measurement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, PreconditionError, SingularSymbolError, StructuralError
from . import grid as gr
from .grid import (GridSpec, ScalarField, VectorField, apply_multiplier, gradient,
                   inverse_laplacian, lebesgue_norm, partial_derivative)
from .lp import DEFAULT_BUMP, SpacetimeField, time_derivative

THETA_MAX = np.pi / 4  # admissible sector half-angles


@dataclass(frozen=True)
class Direction:
    """A unit vector in R^n."""

    omega: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float).copy()
        nrm = float(np.linalg.norm(w))
        if abs(nrm - 1.0) > 1e-14:
            raise ParameterError(f"direction must be unit length, |omega|={nrm}")
        w.flags.writeable = False
        object.__setattr__(self, "omega", w)

    @classmethod
    def of(cls, vec) -> "Direction":
        v = np.asarray(vec, dtype=float)
        return cls(v / np.linalg.norm(v))


@dataclass(frozen=True)
class SectorSpec:
    """Smooth angular cutoff about +-omega at opening theta.

    mode 'greater' keeps frequencies at angle >~ theta from both cones,
    'leq' is its exact complement, 'band' is greater(theta/2) - greater(theta).
    """

    omega: Direction
    theta: float
    mode: str = "greater"
    bump: object = DEFAULT_BUMP

    def __post_init__(self):
        if not 0.0 < self.theta <= THETA_MAX:
            raise ParameterError(f"sector angle theta={self.theta} outside (0, {THETA_MAX}]")
        if self.mode not in ("greater", "leq", "band"):
            raise ParameterError(f"unknown sector mode {self.mode!r}")


def angle_to(grid: GridSpec, omega) -> np.ndarray:
    """Angle between each lattice frequency and omega (pi/2 at the zero mode)."""
    w = omega.omega if isinstance(omega, Direction) else np.asarray(omega, dtype=float)
    dot = np.tensordot(w, grid.xi, axes=(0, 0))
    with np.errstate(invalid="ignore", divide="ignore"):
        c = dot / grid.xi_norm
    c = np.where(grid.xi_norm == 0, 0.0, np.clip(c, -1.0, 1.0))
    return np.arccos(c)


def greater_symbol(grid: GridSpec, omega, theta: float, bump=DEFAULT_BUMP) -> np.ndarray:
    ang = angle_to(grid, omega)
    return ((1.0 - bump.eta(ang / theta)) *
            (1.0 - bump.eta((np.pi - ang) / theta))).astype(np.complex128)


def sector_symbol(grid: GridSpec, spec: SectorSpec) -> np.ndarray:
    g = greater_symbol(grid, spec.omega, spec.theta, spec.bump)
    if spec.mode == "greater":
        return g
    if spec.mode == "leq":
        return 1.0 - g
    return greater_symbol(grid, spec.omega, spec.theta / 2.0, spec.bump) - g


def sector_project(f: ScalarField, spec: SectorSpec) -> ScalarField:
    scale = np.abs(f.freq_values).max()
    if scale > 0 and np.abs(f.freq_values.flat[0]) > gr.SUPPORT_TOL * scale:
        raise PreconditionError("sector projection needs zero-mean data")
    return apply_multiplier(f, sector_symbol(f.grid, spec))


# ---------------------------------------------------------------------------
# Leray projection

def leray_project(V: VectorField, keep_mean: bool = False) -> VectorField:
    """A_k -> A_k - xi_k (xi.A)/|xi|^2 on the frequency side; output certified
    divergence free.

    Constant (zero-mode) vector fields are already divergence free; by default
    their presence is a precondition error, with keep_mean=True they pass
    through unchanged (the system right-hand sides use that form).
    """
    grid = V.grid
    comps = [c.in_frequency() for c in V.components]
    if not keep_mean:
        for c in comps:
            scale = np.abs(c.values).max()
            if scale > 0 and np.abs(c.values.flat[0]) > gr.SUPPORT_TOL * scale:
                raise PreconditionError("Leray projection needs zero-mean components")
    xi = grid.xi
    dot = sum(xi[j] * comps[j].values for j in range(grid.n))
    with np.errstate(invalid="ignore", divide="ignore"):
        dot_over_sq = dot / grid.xi_norm ** 2
    dot_over_sq = np.where(grid.xi_norm == 0, 0.0, dot_over_sq)
    dot_over_sq = np.where(grid.nyquist_mask, 0.0, dot_over_sq)
    out = []
    for j in range(grid.n):
        vals = np.where(grid.nyquist_mask, 0.0, comps[j].values - xi[j] * dot_over_sq)
        out.append(comps[j].with_values(vals))
    projected = VectorField(tuple(out), divergence_free=True)
    return projected if V.components[0].rep == gr.FREQUENCY else projected.in_physical()


# ---------------------------------------------------------------------------
# null frame operators

def directional_derivative(f: ScalarField, omega) -> ScalarField:
    w = omega.omega if isinstance(omega, Direction) else np.asarray(omega, dtype=float)
    sym = 2j * np.pi * np.tensordot(w, f.grid.xi, axes=(0, 0))
    return apply_multiplier(f, sym)


def transverse_laplacian(f: ScalarField, omega) -> ScalarField:
    """Delta - (omega . grad)^2."""
    w = omega.omega if isinstance(omega, Direction) else np.asarray(omega, dtype=float)
    grid = f.grid
    dot = np.tensordot(w, grid.xi, axes=(0, 0))
    sym = -4.0 * np.pi ** 2 * (grid.xi_norm ** 2 - dot ** 2)
    return apply_multiplier(f, sym)


def transverse_inverse_symbol(grid: GridSpec, omega, theta_min: float) -> np.ndarray:
    """Symbol of the inverse transverse Laplacian, zero within theta_min of the axis."""
    w = omega.omega if isinstance(omega, Direction) else np.asarray(omega, dtype=float)
    dot = np.tensordot(w, grid.xi, axes=(0, 0))
    ang = angle_to(grid, w)
    near_axis = np.minimum(ang, np.pi - ang) < theta_min
    with np.errstate(invalid="ignore", divide="ignore"):
        sym = -1.0 / (4.0 * np.pi ** 2 * (grid.xi_norm ** 2 - dot ** 2))
    return np.where(near_axis | (grid.xi_norm == 0), 0.0, sym).astype(np.complex128)


def transverse_laplacian_inverse(f: ScalarField, omega, theta_min: float) -> ScalarField:
    """Exact inverse of the transverse Laplacian on sector-supported data.

    The caller certifies (via a prior sector projection) that no energy sits
    within theta_min of the +-omega axis; violations raise SingularSymbolError.
    """
    if not theta_min > 0:
        raise ParameterError("theta_min must be positive")
    grid = f.grid
    F = f.freq_values
    ang = angle_to(grid, omega)
    near_axis = (np.minimum(ang, np.pi - ang) < theta_min) & (grid.xi_norm > 0)
    scale = np.abs(F).max()
    hit = near_axis & (np.abs(F) > gr.SUPPORT_TOL * scale)
    if hit.any():
        where = np.argwhere(hit)[0]
        mode = tuple(int(m) if m <= grid.N // 2 else int(m) - grid.N for m in where)
        raise SingularSymbolError(
            f"coefficient at mode {mode} lies within theta_min={theta_min} of the axis")
    return apply_multiplier(f, transverse_inverse_symbol(grid, omega, theta_min))


def null_derivative(F, omega, sign: int):
    """L_omega^s = omega . grad_x + s d_t applied to a spacetime field.

    Closed-form evolutions (objects with mul_symbol/dt) keep analytic time
    derivatives; sampled SpacetimeFields use centered differences and return
    the interior slab.  Returns (result, fd_order); order 0 marks analytic.
    """
    if sign not in (+1, -1):
        raise ParameterError("sign must be +1 or -1")
    w = omega.omega if isinstance(omega, Direction) else np.asarray(omega, dtype=float)
    if hasattr(F, "mul_symbol") and hasattr(F, "dt"):
        sym = 2j * np.pi * np.tensordot(w, F.grid.xi, axes=(0, 0))
        out = F.mul_symbol(sym) + F.dt() * float(sign)
        return out, 0
    if isinstance(F, SpacetimeField):
        if len(F.times) < 3:
            raise StructuralError("null derivative of a sampled field needs >= 3 slices")
        dt_part, order = time_derivative(F)
        spatial = F.map(lambda s: directional_derivative(s, w))
        lo = (len(F.times) - len(dt_part.times)) // 2
        inner = SpacetimeField(dt_part.times, spatial.slices[lo:lo + len(dt_part.times)])
        combined = SpacetimeField(dt_part.times, tuple(
            a + (b * float(sign)) for a, b in zip(inner.slices, dt_part.slices)))
        return combined, order
    raise StructuralError(f"cannot take a null derivative of {type(F).__name__}")


# ---------------------------------------------------------------------------
# divergence-free angular gain

def coulomb_gain_ratio(B: VectorField, omega, theta: float, mode: str = "leq",
                       bump=DEFAULT_BUMP) -> float:
    """max over lattice modes of |(Pi B)^(xi).omega| / (theta |(Pi B)^(xi)|).

    Pi is the angular 'leq' (or 'band') projection about omega; B must carry a
    divergence-free certificate.  0/0 modes count as 0.
    """
    if not B.divergence_free:
        raise PreconditionError("coulomb_gain_ratio needs a divergence-free certificate")
    if mode not in ("leq", "band"):
        raise ParameterError(f"projection mode must be 'leq' or 'band', got {mode!r}")
    grid = B.grid
    w = omega.omega if isinstance(omega, Direction) else np.asarray(omega, dtype=float)
    spec = SectorSpec(Direction(w), theta, mode=mode, bump=bump)
    sym = sector_symbol(grid, spec)
    hats = [sym * c.freq_values for c in B.in_frequency().components]
    num = np.abs(sum(h * wj for h, wj in zip(hats, w)))
    mag = np.sqrt(sum(np.abs(h) ** 2 for h in hats))
    scale = mag.max()
    if scale == 0.0:
        return 0.0
    live = mag > 1e-14 * scale
    ratio = np.zeros(grid.shape)
    ratio[live] = num[live] / (theta * mag[live])
    ratio[grid.xi_norm == 0] = 0.0
    return float(ratio.max())


# ---------------------------------------------------------------------------
# connection geometry: curvature, covariant derivatives, gauge transforms

def curvature(A0: ScalarField, A0_t: ScalarField, Asp: VectorField, Asp_t: VectorField) -> dict:
    """F_{alpha beta} = d_alpha A_beta - d_beta A_alpha as a dict over alpha < beta.

    Index 0 is time; F_{0j} = d_t A_j - d_j A0 uses the stored time derivatives.
    """
    n = A0.grid.n
    F = {}
    for j in range(n):
        F[(0, j + 1)] = Asp_t.components[j] - partial_derivative(A0, j)
    for j in range(n):
        for k in range(j + 1, n):
            F[(j + 1, k + 1)] = (partial_derivative(Asp.components[k], j)
                                 - partial_derivative(Asp.components[j], k))
    return F


def curvature_l2(F: dict) -> float:
    return float(np.sqrt(sum(lebesgue_norm(v, 2) ** 2 for v in F.values())))


def covariant_derivative(phi: ScalarField, phi_t: ScalarField, A0: ScalarField,
                         Asp: VectorField, alpha: int) -> ScalarField:
    """D_alpha phi = (d_alpha + i A_alpha) phi; alpha = 0 is time."""
    if alpha == 0:
        return phi_t + ScalarField(phi.grid, 1j * A0.phys_values * phi.phys_values)
    j = alpha - 1
    return partial_derivative(phi, j) + ScalarField(
        phi.grid, 1j * Asp.components[j].phys_values * phi.phys_values)


def _require_real(f: ScalarField, name: str):
    v = f.phys_values
    scale = np.abs(v).max()
    if scale > 0 and np.abs(v.imag).max() > 1e-12 * scale:
        raise PreconditionError(f"{name} must be real-valued")


def gauge_transform(phi, phi_t, A0, A0_t, Asp, Asp_t, chi, chi_t, chi_tt):
    """phi -> e^{i chi} phi, A_alpha -> A_alpha - d_alpha chi, with the induced
    time derivatives; chi is a real spacetime scalar given as (chi, d_t chi,
    d_t^2 chi) at the state's instant.  Returns the transformed 6-tuple."""
    for f, name in ((chi, "chi"), (chi_t, "d_t chi"), (chi_tt, "d_t^2 chi")):
        _require_real(f, name)
    grid = phi.grid
    phase = np.exp(1j * chi.phys_values)
    phi2 = ScalarField(grid, phase * phi.phys_values)
    phi2_t = ScalarField(grid, phase * (phi_t.phys_values + 1j * chi_t.phys_values
                                        * phi.phys_values))
    A0_2 = A0 - chi_t
    A0_2t = A0_t - chi_tt
    gch = gradient(chi)
    gch_t = gradient(chi_t)
    Asp2 = VectorField(tuple(a - b for a, b in zip(Asp.components, gch.components)))
    Asp2_t = VectorField(tuple(a - b for a, b in zip(Asp_t.components, gch_t.components)))
    return phi2, phi2_t, A0_2, A0_2t, Asp2, Asp2_t


# ---------------------------------------------------------------------------
# null-form structure of the spatial current

def _point_mul(a: ScalarField, b: np.ndarray) -> ScalarField:
    return ScalarField(a.grid, a.phys_values * b)


def current_density(phi: ScalarField, Asp: VectorField) -> VectorField:
    """Im(phi conj(D_j phi)) componentwise (the spatial matter current)."""
    grid = phi.grid
    ph = phi.phys_values
    comps = []
    for j in range(grid.n):
        dj = partial_derivative(phi, j).phys_values
        cov = dj + 1j * Asp.components[j].phys_values * ph
        comps.append(ScalarField(grid, np.imag(ph * np.conj(cov)), real_valued=True))
    return VectorField(tuple(comps))


def null_form_check(phi: ScalarField, Asp: VectorField):
    """Relative L^2 residuals of the current decomposition

        -P Im(phi conj(D_j phi)) = i Delta^{-1} d_k (d_k phi conj(d_j phi)
                                   - d_j phi conj(d_k phi)) + P(A_j |phi|^2),

    returned for the |phi|^2 coupling and, for the record, for the literal
    phi^2 coupling (which does not close; both numbers are reported).

    Both sides are compared on their mean-free parts: on the box the constant
    mode carries the conserved net current, which the homogeneous display
    (built from Delta^{-1} d_k) cannot see."""
    if not Asp.divergence_free:
        raise PreconditionError("null_form_check needs a divergence-free connection")
    grid = phi.grid

    def drop_mean(field: ScalarField) -> ScalarField:
        return field - gr.constant_field(grid, field.mean())

    lhs = leray_project(current_density(phi, Asp), keep_mean=True) * (-1.0)
    lhs = lhs.map(drop_mean)

    derivs = [partial_derivative(phi, j).phys_values for j in range(grid.n)]
    absphi2 = np.abs(phi.phys_values) ** 2
    phisq = phi.phys_values ** 2

    def rhs_with(coupling):
        comps = []
        for j in range(grid.n):
            acc = gr.zero_field(grid)
            for k in range(grid.n):
                antis = ScalarField(grid, derivs[k] * np.conj(derivs[j])
                                    - derivs[j] * np.conj(derivs[k]))
                acc = acc + partial_derivative(inverse_laplacian(antis), k)
            comps.append(acc * 1j)
        grad_part = VectorField(tuple(comps))
        coupling_part = leray_project(VectorField(tuple(
            _point_mul(Asp.components[j], coupling) for j in range(grid.n))), keep_mean=True)
        return (grad_part + coupling_part).map(drop_mean)

    def resid(rhs):
        num = np.sqrt(sum(lebesgue_norm(a - b, 2) ** 2
                          for a, b in zip(lhs.components, rhs.components)))
        den = max(np.sqrt(sum(lebesgue_norm(c, 2) ** 2 for c in lhs.components)), 1e-300)
        return num / den

    return resid(rhs_with(absphi2)), resid(rhs_with(phisq))
