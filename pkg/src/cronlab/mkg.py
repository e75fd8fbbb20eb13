"""The Coulomb-gauge Maxwell-Klein-Gordon system on the periodic box.

The full unknown is (A0, Aj, phi) with the constraint div A = 0.  The
dynamical fields (A, phi) evolve by their wave equations

    box A_j      = -P Im(phi conj(D_j phi))
    box'_A phi   = 2 i A0 d_t phi + i (d_t A0) phi + |A|^2 phi - A0^2 phi,
    box'_A       = box + 2 i A . grad,

while A0 is slaved to the matter field through the elliptic equation

    (Delta - |phi|^2) A0 = -Im(phi conj(phi_t))

and d_t A0 is reconstructed from the non-solenoidal part of the current.  The
remaining Maxwell equations become monitored residuals.  Integration is a
Strang kick-drift-kick split: exact free-wave flow in Fourier space, forcing
kicks applied to the velocities with the A0 phi_t coupling handled
pointwise-implicitly, A0 re-solved each substep, and Leray re-projection of A
each step.  Quadratic nonlinear products are 2/3-rule dealiased.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConvergenceError, ParameterError, PreconditionError
from . import grid as gr
from .grid import (FREQUENCY, GridSpec, ScalarField, VectorField, inner_product,
                   inverse_laplacian, laplacian, lebesgue_norm, partial_derivative)
from .gauge import covariant_derivative, current_density, curvature, leray_project
from .lp import besov_norm
from .exponents import exponents


@dataclass(frozen=True, eq=False)
class ConnectionState:
    """The full unknown at one instant, with time derivatives of every field."""

    t: float
    A0: ScalarField
    A0_t: ScalarField
    A_sp: VectorField
    A_sp_t: VectorField
    phi: ScalarField
    phi_t: ScalarField

    def __post_init__(self):
        if not self.A_sp.divergence_free or not self.A_sp_t.divergence_free:
            raise PreconditionError("spatial connection must carry a divergence-free "
                                    "certificate")

    @property
    def grid(self) -> GridSpec:
        return self.phi.grid


@dataclass(frozen=True)
class EnergyReport:
    total: float
    kinetic: float           # (1/2) integral |D phi|^2 over all spacetime indices
    curvature: float         # (1/4) integral |F|^2
    gauss_residual: float
    maxwell_residual: float  # non-solenoidal spatial Maxwell equations
    div_residual: float


def _dealias_mask(grid: GridSpec) -> np.ndarray:
    cut = grid.N // 3
    modes = np.rint(grid.freq_1d * grid.L).astype(int)
    keep1d = np.abs(modes) <= cut
    mask = np.ones(grid.shape, dtype=bool)
    for axis in range(grid.n):
        shape = [1] * grid.n
        shape[axis] = grid.N
        mask &= keep1d.reshape(shape)
    return mask


def dealias(f: ScalarField) -> ScalarField:
    """2/3-rule truncation applied after nonlinear products."""
    return gr.apply_multiplier(f, _dealias_mask(f.grid).astype(np.complex128))


def _field(grid, values, real=False) -> ScalarField:
    return ScalarField(grid, values, real_valued=real)


# ---------------------------------------------------------------------------
# the elliptic A0 solve

def elliptic_a0(phi: ScalarField, phi_t: ScalarField, tol: float = 1e-10,
                max_iter: int = 200):
    """Solve (Delta - |phi|^2) A0 = -Im(phi conj(phi_t)) by fixed-point iteration.

    The iteration inverts Delta on the mean-free part and balances the mean of
    the source against the |phi|^2 coupling (on the box, the constant mode of
    A0 absorbs any net charge, keeping the Gauss law exact).  Returns
    (A0, relative_residual, iterations).
    """
    grid = phi.grid

    def project(arr):
        # keep the solve inside the Nyquist-free subspace every multiplier uses
        F = np.fft.fftn(arr)
        F = np.where(grid.nyquist_mask, 0.0, F)
        return np.fft.ifftn(F).real

    source = project(-np.imag(phi.phys_values * np.conj(phi_t.phys_values)))
    absphi2 = np.abs(phi.phys_values) ** 2
    mean_phi2 = absphi2.mean()
    src_scale = np.linalg.norm(source)
    if src_scale == 0.0:
        return _field(grid, np.zeros(grid.shape), real=True), 0.0, 0
    a0 = np.zeros(grid.shape)
    history = []
    for it in range(1, max_iter + 1):
        coupling = project(absphi2 * a0)
        rhs_arr = source + coupling
        fluct = inverse_laplacian(
            _field(grid, rhs_arr - rhs_arr.mean(), real=True)).phys_values.real.copy()
        fluct -= fluct.mean()
        # mean balance of (Delta - |phi|^2) A0 = S: mean(|phi|^2 A0) = -mean(S)
        bar = -(source.mean() + (absphi2 * fluct).mean()) / mean_phi2 if mean_phi2 > 0 else 0.0
        a0 = fluct + bar
        resid = laplacian(_field(grid, a0, real=True)).phys_values.real \
            - project(absphi2 * a0) - source
        rel = np.linalg.norm(resid) / src_scale
        history.append(rel)
        if rel <= tol:
            return _field(grid, a0, real=True), rel, it
    raise ConvergenceError(
        f"elliptic A0 iteration did not contract to {tol} in {max_iter} steps",
        history=history)


def reconstruct_a0_t(phi: ScalarField, phi_t: ScalarField, A0: ScalarField,
                     Asp: VectorField) -> ScalarField:
    """d_t A0 = -Delta^{-1} div Im(phi conj(D phi)); the non-solenoidal part of
    the current determines d_t grad A0, inverted through the Laplacian."""
    grid = phi.grid
    J = current_density(phi, Asp)
    divJ = gr.divergence(J)
    return _field(grid, -inverse_laplacian(divJ).phys_values.real, real=True)


# ---------------------------------------------------------------------------
# compatible data

def make_compatible_data(f: ScalarField, g: ScalarField, a: VectorField,
                         adot: VectorField, neutralize_charge: bool = True,
                         self_check: bool = True) -> ConnectionState:
    """Assemble a constraint-satisfying state from raw (phi, phi_t, A, A_t) data.

    a/adot are Leray-projected; A0 solves its elliptic equation; d_t A0 is
    reconstructed from the current.  With neutralize_charge the velocity g is
    shifted by i lambda f (lambda real) to cancel the net charge Im<f, g>,
    which keeps the constant mode of A0 at the nonlinear (quadratic) scale.
    """
    grid = f.grid
    Asp = leray_project(a)
    Asp_t = leray_project(adot)
    if neutralize_charge:
        nf = lebesgue_norm(f, 2)
        if nf > 0:
            lam = float(np.imag(inner_product(f, g))) / nf ** 2
            g = g + ScalarField(grid, 1j * lam * f.phys_values)
    A0, _, _ = elliptic_a0(f, g)
    A0_t = reconstruct_a0_t(f, g, A0, Asp)
    state = ConnectionState(t=0.0, A0=A0, A0_t=A0_t, A_sp=Asp, A_sp_t=Asp_t,
                            phi=f, phi_t=g)
    if self_check:
        rep = constraint_residuals(state)
        if rep.gauss_residual > 1e-8 or rep.div_residual > 1e-8:
            raise ConvergenceError(
                f"compatible data failed its self-check: gauss={rep.gauss_residual:.2e} "
                f"div={rep.div_residual:.2e}")
    return state


# ---------------------------------------------------------------------------
# right-hand sides

def rhs(state: ConnectionState, dealiased: bool = True):
    """The forcing pair of the caricature system: (wave forcing of A, the
    lower-order forcing of box'_A phi), both exactly as the system displays.

    Products are dealiased by the 2/3 rule; the A-forcing is Leray projected
    (its constant mode, genuinely divergence free, passes through).
    """
    grid = state.grid
    trunc = dealias if dealiased else (lambda x: x)
    J = current_density(state.phi, state.A_sp)
    forcing_A = leray_project(VectorField(tuple(trunc(c) * (-1.0) for c in J.components)),
                              keep_mean=True)
    ph, pht = state.phi.phys_values, state.phi_t.phys_values
    a0 = state.A0.phys_values.real
    a0t = state.A0_t.phys_values.real
    asq = sum(np.abs(c.phys_values.real) ** 2 for c in state.A_sp.components)
    vals = (2j * a0 * pht + 1j * a0t * ph + asq * ph - a0 ** 2 * ph)
    forcing_phi = trunc(_field(grid, vals))
    return forcing_A, forcing_phi


def _phi_acceleration_extras(state: ConnectionState, dealiased=True) -> ScalarField:
    """Everything in phi_tt besides Delta phi and the implicit A0 phi_t term:
    2i A.grad phi - i (d_t A0) phi - |A|^2 phi + A0^2 phi."""
    grid = state.grid
    trunc = dealias if dealiased else (lambda x: x)
    transport = np.zeros(grid.shape, dtype=np.complex128)
    for j in range(grid.n):
        transport += state.A_sp.components[j].phys_values.real \
            * partial_derivative(state.phi, j).phys_values
    ph = state.phi.phys_values
    a0 = state.A0.phys_values.real
    a0t = state.A0_t.phys_values.real
    asq = sum(np.abs(c.phys_values.real) ** 2 for c in state.A_sp.components)
    vals = 2j * transport - 1j * a0t * ph - asq * ph + a0 ** 2 * ph
    return trunc(_field(grid, vals))


# ---------------------------------------------------------------------------
# the integrator

def stability_limit(grid: GridSpec) -> float:
    return 0.5 * grid.dx


def _slave_a0(state: ConnectionState) -> ConnectionState:
    A0, _, _ = elliptic_a0(state.phi, state.phi_t)
    A0_t = reconstruct_a0_t(state.phi, state.phi_t, A0, state.A_sp)
    return replace(state, A0=A0, A0_t=A0_t)


def _kick(state: ConnectionState, h: float) -> ConnectionState:
    """Velocity kick over h; phi_t gets the lower-order terms with the
    A0 phi_t coupling solved pointwise implicitly.

    The wave-equation display box A = -P J together with box = -d_t^2 + Delta
    makes the acceleration A_tt = Delta A + P J, so the kick adds +P J."""
    grid = state.grid
    forcing_A, _ = rhs(state)   # the displayed forcing, -P J
    Asp_t = VectorField(tuple(c - f * h for c, f in
                              zip(state.A_sp_t.components, forcing_A.components)),
                        divergence_free=True)
    extras = _phi_acceleration_extras(state)
    a0 = state.A0.phys_values.real
    new_phi_t = (state.phi_t.phys_values + h * extras.phys_values) / (1.0 + 2j * h * a0)
    return replace(state, A_sp_t=Asp_t, phi_t=_field(grid, new_phi_t))


def _drift(state: ConnectionState, h: float) -> ConnectionState:
    """Exact free-wave flow of (A, phi) for time h in Fourier space."""
    grid = state.grid
    rho = 2.0 * np.pi * grid.xi_norm
    c = np.cos(rho * h)
    s = np.sin(rho * h)
    sinc = np.where(rho > 0, s / np.where(rho > 0, rho, 1.0), h)

    def rotate(u: ScalarField, v: ScalarField):
        U, V = u.freq_values, v.freq_values
        return (ScalarField(grid, c * U + sinc * V, rep=FREQUENCY).in_physical(),
                ScalarField(grid, -rho * s * U + c * V, rep=FREQUENCY).in_physical())

    phi, phi_t = rotate(state.phi, state.phi_t)
    comps, comps_t = [], []
    for u, v in zip(state.A_sp.components, state.A_sp_t.components):
        cu, cv = rotate(u, v)
        comps.append(cu)
        comps_t.append(cv)
    return replace(state, t=state.t + h,
                   A_sp=VectorField(tuple(comps), divergence_free=True),
                   A_sp_t=VectorField(tuple(comps_t), divergence_free=True),
                   phi=phi, phi_t=phi_t)


def step(state: ConnectionState, dt: float) -> ConnectionState:
    """One Strang kick-drift-kick step; A0 re-slaved at each substep and the
    connection re-projected by Leray at the end."""
    grid = state.grid
    if dt > stability_limit(grid) * (1.0 + 1e-12):
        raise ParameterError(f"dt={dt} exceeds the stability bound {stability_limit(grid)}")
    s1 = _kick(_slave_a0(state), dt / 2.0)
    s2 = _drift(s1, dt)
    s3 = _kick(_slave_a0(s2), dt / 2.0)
    Asp = leray_project(s3.A_sp, keep_mean=True)
    Asp_t = leray_project(s3.A_sp_t, keep_mean=True)
    return _slave_a0(replace(s3, A_sp=Asp, A_sp_t=Asp_t))


def evolve(state: ConnectionState, t_final: float, dt: float, callback=None) -> ConnectionState:
    steps = int(round((t_final - state.t) / dt))
    if abs(state.t + steps * dt - t_final) > 1e-9:
        raise ParameterError("t_final must be an integer number of steps away")
    for _ in range(steps):
        state = step(state, dt)
        if callback is not None:
            callback(state)
    return state


# ---------------------------------------------------------------------------
# diagnostics

def energy_report(state: ConnectionState) -> EnergyReport:
    return constraint_residuals(state)


def constraint_residuals(state: ConnectionState) -> EnergyReport:
    """Energies plus the relative L2 residuals of the constraint equations."""
    grid = state.grid
    vol = grid.cell_volume

    # covariant kinetic energy over all indices
    d0 = covariant_derivative(state.phi, state.phi_t, state.A0, state.A_sp, 0)
    kin = 0.5 * np.sum(np.abs(d0.phys_values) ** 2) * vol
    for j in range(grid.n):
        dj = covariant_derivative(state.phi, state.phi_t, state.A0, state.A_sp, j + 1)
        kin += 0.5 * np.sum(np.abs(dj.phys_values) ** 2) * vol

    F = curvature(state.A0, state.A0_t, state.A_sp, state.A_sp_t)
    curv = 0.5 * sum(np.sum(np.abs(v.phys_values) ** 2) * vol for v in F.values())

    # Gauss law: Delta A0 + Im(phi conj(D_0 phi)) = 0
    rho_cov = np.imag(state.phi.phys_values * np.conj(d0.phys_values))
    gauss_lhs = laplacian(state.A0).phys_values.real + rho_cov
    gauss_scale = max(np.linalg.norm(laplacian(state.A0).phys_values.real),
                      np.linalg.norm(rho_cov), 1e-300)
    gauss = np.linalg.norm(gauss_lhs) / gauss_scale

    # non-solenoidal spatial Maxwell: grad(d_t A0) + (1 - P) Im(phi conj(D phi)) = 0
    J = current_density(state.phi, state.A_sp)
    J_sol = leray_project(J, keep_mean=True)
    nonsol = tuple(a - b for a, b in zip(J.components, J_sol.components))
    g_a0t = tuple(partial_derivative(state.A0_t, j) for j in range(grid.n))
    m_num = math.sqrt(sum(lebesgue_norm(a + b, 2) ** 2 for a, b in zip(g_a0t, nonsol)))
    m_scale = max(math.sqrt(sum(lebesgue_norm(a, 2) ** 2 for a in g_a0t)),
                  math.sqrt(sum(lebesgue_norm(b, 2) ** 2 for b in nonsol)), 1e-300)
    maxwell = m_num / m_scale

    # Coulomb constraint
    div_num = max(lebesgue_norm(gr.divergence(state.A_sp), 2),
                  lebesgue_norm(gr.divergence(state.A_sp_t), 2))
    div_scale = max(math.sqrt(sum(lebesgue_norm(partial_derivative(c, j), 2) ** 2
                                  for c in state.A_sp.components for j in range(grid.n))),
                    1e-300)
    divres = div_num / div_scale

    return EnergyReport(total=float(kin + curv), kinetic=float(kin), curvature=float(curv),
                        gauss_residual=float(gauss), maxwell_residual=float(maxwell),
                        div_residual=float(divres))


# ---------------------------------------------------------------------------
# trajectory checkpoints

def save_trajectory(directory, states, tag="state") -> str:
    """Write a checkpoint sequence: one binary field dump per field per state
    plus a manifest CSV of (t, energy, residuals).  Returns the manifest path."""
    import os
    from .fieldio import write_field
    os.makedirs(directory, exist_ok=True)
    lines = ["# cronlab trajectory manifest v1",
             "index,t,total_energy,gauss_residual,maxwell_residual,div_residual,files"]
    for i, state in enumerate(states):
        rep = constraint_residuals(state)
        names = []
        fields = {"phi": state.phi, "phi_t": state.phi_t, "A0": state.A0,
                  "A0_t": state.A0_t}
        for j, c in enumerate(state.A_sp.components):
            fields[f"A{j}"] = c
        for j, c in enumerate(state.A_sp_t.components):
            fields[f"A{j}_t"] = c
        for name, fld in fields.items():
            fname = f"{tag}_{i:04d}_{name}.crnl"
            write_field(os.path.join(directory, fname), fld.in_physical(),
                        extension=[state.t])
            names.append(fname)
        lines.append(",".join([str(i), format(state.t, ".17g"),
                               format(rep.total, ".17g"),
                               format(rep.gauss_residual, ".17g"),
                               format(rep.maxwell_residual, ".17g"),
                               format(rep.div_residual, ".17g"),
                               ";".join(names)]))
    manifest = os.path.join(directory, "manifest.csv")
    with open(manifest, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# critical norms along a trajectory

@dataclass(frozen=True)
class NormSample:
    t: float
    data_norm: float          # ||Phi[t]||_D
    solution_sup: float       # running L^infty_t part of S
    solution_l2: float        # running L^2_t B[p_*, 2n/3] part of S
    elliptic_sup: float       # running L^infty_t part of S_ellip
    elliptic_l1: float        # running L^1_t B[p_**, n]_1 part of S_ellip
    forcing_n1: float         # running N_1 of the accumulated A-forcing
    forcing_n2: float         # running N_2


def data_norm(state: ConnectionState, band_range=None) -> float:
    """||Phi[t]||_D: the l2 combination of B[2, n/2]_2 norms of all first
    derivatives of (A, phi, A0)."""
    grid = state.grid
    n = grid.n
    half = n / 2.0
    acc = 0.0

    def add(f: ScalarField):
        nonlocal acc
        acc += besov_norm(f, 2, half, 2, band_range, allow_decreasing=True,
                          exclude_zero_mode=True) ** 2

    for fld in (state.phi, state.A0, *state.A_sp.components):
        for j in range(n):
            add(partial_derivative(fld, j))
    for fld in (state.phi_t, state.A0_t, *state.A_sp_t.components):
        add(fld)
    return math.sqrt(acc)


def critical_norm_tracker(trajectory, delta: float = 1e-2, band_range=None):
    """Norm samples along a sampled trajectory (a list of states at increasing
    times): the data norm, the running solution and elliptic norms, and the
    accumulated N_1/N_2 forcing norms.  Requires n > 3 (p_* is undefined below
    that)."""
    if not trajectory:
        raise ParameterError("empty trajectory")
    grid = trajectory[0].grid
    n = grid.n
    exps = exponents(n, delta)  # raises for n <= 3
    p_star = float(exps.p_star)
    p_sstar = float(exps.p_sstar)
    half = n / 2.0
    samples = []
    sup_d = 0.0
    sup_e = 0.0
    l2_acc = 0.0
    l1_acc = 0.0
    n1_acc = 0.0
    n2_acc = 0.0
    prev_t = None

    def grad_fields(state):
        for fld in (state.phi, state.A0, *state.A_sp.components):
            for j in range(n):
                yield partial_derivative(fld, j)
        for fld in (state.phi_t, state.A0_t, *state.A_sp_t.components):
            yield fld

    for state in trajectory:
        d = data_norm(state, band_range)
        sup_d = max(sup_d, d)
        bsum = 0.0
        esum_1 = 0.0
        for f in grad_fields(state):
            bsum += besov_norm(f, p_star, 2 * n / 3.0, 2, band_range,
                               allow_decreasing=True, exclude_zero_mode=True) ** 2
        for j in range(n):
            esum_1 += besov_norm(partial_derivative(state.A0, j), p_sstar, n, 1, band_range,
                                 allow_decreasing=True, exclude_zero_mode=True) ** 2
        esum_1 += besov_norm(state.A0_t, p_sstar, n, 1, band_range,
                             allow_decreasing=True, exclude_zero_mode=True) ** 2
        e_d = math.sqrt(
            sum(besov_norm(partial_derivative(state.A0, j), 2, half, 2, band_range,
                           allow_decreasing=True, exclude_zero_mode=True) ** 2
                for j in range(n))
            + besov_norm(state.A0_t, 2, half, 2, band_range, allow_decreasing=True,
                         exclude_zero_mode=True) ** 2)
        sup_e = max(sup_e, e_d)
        forcing_A, _ = rhs(state)
        f_n1 = sum(besov_norm(c, 2, half, 1, band_range, allow_decreasing=True,
                              exclude_zero_mode=True) for c in forcing_A.components)
        f_n2 = math.sqrt(sum(besov_norm(c, 2, half, 2, band_range, allow_decreasing=True,
                                        exclude_zero_mode=True) ** 2
                             for c in forcing_A.components))
        if prev_t is not None:
            dt = state.t - prev_t
            l2_acc += dt * bsum
            l1_acc += dt * math.sqrt(esum_1)
            n1_acc += dt * f_n1
            n2_acc += dt * f_n2
        prev_t = state.t
        samples.append(NormSample(t=state.t, data_norm=d, solution_sup=sup_d,
                                  solution_l2=math.sqrt(l2_acc), elliptic_sup=sup_e,
                                  elliptic_l1=l1_acc, forcing_n1=n1_acc, forcing_n2=n2_acc))
    return samples
