"""Reproducible experiment driver.

Every suite is a pure function of (config, seed): randomness comes from
Philox4x64-10 counter-based streams keyed (seed, stream_index), artifacts are
written with fixed formatting, and the machine summary excludes wall-clock
data, so a rerun with the same config and seed is byte-identical.

Suites: identities, lp-suite, coulomb-gain, mkg-evolve, parametrix-residual,
unitarity, dispersive, norms.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from .errors import ParameterError
from . import grid as gr
from .grid import GridSpec, ScalarField, VectorField, lebesgue_norm
from . import lp
from .lp import BandRange, SpacetimeField, besov_norm, fit_loglog
from . import gauge
from .gauge import Direction, coulomb_gain_ratio, leray_project, null_form_check
from . import mkg
from . import parametrix as pmx
from .exponents import exponents, sigma_window, validate_sigma
from .random_fields import (flat_spectrum_field, packet_field, random_divergence_free,
                            random_field, stream)

CSV_SCHEMA = "experiment,n,N,L,param,seed,lhs,rhs,ratio"
CSV_VERSION = 1

EXPERIMENT_NAMES = ("identities", "lp-suite", "coulomb-gain", "mkg-evolve",
                    "parametrix-residual", "unitarity", "dispersive", "norms")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    n: int | None = None          # suite defaults apply when unset
    N: int | None = None
    L: float | None = None
    k_range: tuple | None = None
    sigma: float = 0.25
    delta: float = 1e-2
    eps_list: tuple = (1e-1, 3e-2, 1e-2, 3e-3)
    seed: int = 7
    t_max: float | None = None
    t_samples: int = 5
    direction_cache: str = "auto"   # auto | exact | bucketed
    out_dir: str = "out"

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENT_NAMES:
            raise ParameterError(
                f"unknown experiment {self.experiment!r}; choose from {EXPERIMENT_NAMES}")
        if len(self.eps_list) == 0:
            raise ParameterError("eps_list must not be empty")
        if any(e <= 0 for e in self.eps_list):
            raise ParameterError("eps values must be positive")
        if self.direction_cache not in ("auto", "exact", "bucketed"):
            raise ParameterError(f"unknown direction-cache policy {self.direction_cache!r}")
        if self.n is not None and self.n >= 6:
            validate_sigma(self.n, self.sigma)
        elif not 0.0 < self.sigma < 0.5:
            raise ParameterError(f"sigma={self.sigma} outside (0, 1/2)")
        if self.t_max is not None and self.L is not None and not self.t_max < self.L / 2.0:
            raise ParameterError(f"time window t_max={self.t_max} must stay below the "
                                 f"wrap limit L/2={self.L / 2.0}")
        if self.t_samples < 2:
            raise ParameterError("t_samples must be at least 2")
        return self

    def config_hash(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k != "out_dir"}
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(raw) - known
        if unknown:
            raise ParameterError(f"unknown config fields: {sorted(unknown)}")
        for key in ("eps_list", "k_range"):
            if key in raw and raw[key] is not None:
                raw[key] = tuple(raw[key])
        return cls(**raw)


@dataclass(frozen=True)
class AcceptanceRecord:
    id: str
    value: float
    lo: float
    hi: float
    passed: bool
    seconds: float

    @classmethod
    def bounded(cls, rid, value, lo=-math.inf, hi=math.inf, seconds=0.0):
        ok = bool(lo <= value <= hi) and math.isfinite(value)
        return cls(id=rid, value=float(value), lo=float(lo), hi=float(hi),
                   passed=ok, seconds=seconds)


@dataclass(frozen=True)
class ScanRow:
    experiment: str
    n: int
    N: int
    L: float
    param: float
    seed: int
    lhs: float
    rhs: float
    ratio: float


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_scan_csv(path, rows, config_hash: str) -> None:
    lines = [f"# cronlab scan v{CSV_VERSION} schema={CSV_SCHEMA} config={config_hash}",
             CSV_SCHEMA]
    for r in rows:
        lines.append(",".join(_fmt(v) for v in
                              (r.experiment, r.n, r.N, r.L, r.param, r.seed,
                               r.lhs, r.rhs, r.ratio)))
    _atomic_write(path, "\n".join(lines) + "\n")


def _atomic_write(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("CRONLAB_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Order-preserving map, threaded when CRONLAB_THREADS > 1."""
    items = list(items)
    workers = worker_count()
    if workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# shared builders

def _connection_data(grid: GridSpec, band: BandRange, seed: int, index: int):
    rng = stream(seed, index)
    lo, hi = band.annulus()
    a = random_divergence_free(grid, rng, lo, hi)
    adot = random_divergence_free(grid, rng, lo, hi)
    return a, adot


def _pair_data_norm(a: VectorField, adot: VectorField, band: BandRange) -> float:
    half = a.grid.n / 2.0
    acc = 0.0
    for c in a.components:
        for j in range(a.grid.n):
            acc += besov_norm(gr.partial_derivative(c, j), 2, half, 2, band,
                              allow_decreasing=True, exclude_zero_mode=True) ** 2
    for c in adot.components:
        acc += besov_norm(c, 2, half, 2, band, allow_decreasing=True,
                          exclude_zero_mode=True) ** 2
    return math.sqrt(acc)


def make_free_connection(grid: GridSpec, band: BandRange, eps: float, seed: int,
                         index: int = 0, forcing=None) -> pmx.FreeConnection:
    """A random divergence-free free-wave connection with data norm eps."""
    a, adot = _connection_data(grid, band, seed, index)
    scale = _pair_data_norm(a, adot, band)
    factor = eps / scale if scale > 0 else 0.0
    a_hat = np.stack([c.freq_values for c in a.components]) * factor
    ad_hat = np.stack([c.freq_values for c in adot.components]) * factor
    return pmx.FreeConnection(grid, a_hat, ad_hat, band, forcing=forcing)


def _parametrix_setup(n=2, N=64, L=8.0, seed=7, eps=1e-2, sigma=0.25,
                      policy="auto", eta_dir=0.1):
    """Shared grid / annulus / cache / operators for the parametrix suites."""
    grid = GridSpec(n, N, L)
    band = BandRange(-3, -2)
    cut = pmx.AnnulusCutoff(rho=grid.N / (8.0 * grid.L)).validate(grid)
    modes = cut.modes(grid)
    cache = pmx.DirectionCache.build(grid, modes, policy=policy, eta_dir=eta_dir)
    conn = make_free_connection(grid, band, eps, seed)
    return grid, band, cut, cache, conn


def _timer():
    t0 = time.perf_counter()
    return lambda: time.perf_counter() - t0


# ---------------------------------------------------------------------------
# suite: identities (criterion 1)

def run_identities(config: ExperimentConfig):
    records, rows = [], []
    seed = config.seed
    worst = {"leray": 0.0, "lp_partition": 0.0, "box_null": 0.0, "null_form": 0.0,
             "phase_defect": 0.0, "psi_real": 0.0, "adjoint": 0.0, "phase_split": 0.0,
             "null_form_literal_gap": math.inf}
    elapsed = _timer()
    combos = [(2, 32), (2, 64), (3, 32), (3, 64)]
    for idx, (n, N) in enumerate(combos):
        L = 8.0
        grid = GridSpec(n, N, L)
        rng = stream(seed, idx)
        band = BandRange(-3, -2)

        # Leray: gradients annihilated, fixed point, idempotence, self-adjointness
        chi = random_field(grid, rng, 0.2, 1.0, real=True)
        gradchi = gr.gradient(chi)
        r = math.sqrt(sum(lebesgue_norm(c, 2) ** 2 for c in leray_project(gradchi).components))
        r /= math.sqrt(sum(lebesgue_norm(c, 2) ** 2 for c in gradchi.components))
        V = VectorField(tuple(random_field(grid, rng, 0.2, 1.0) for _ in range(n)))
        PV = leray_project(V)
        PPV = leray_project(PV)
        r = max(r, max(gr.relative_l2_difference(x, y)
                       for x, y in zip(PV.components, PPV.components)))
        W = VectorField(tuple(random_field(grid, rng, 0.2, 1.0) for _ in range(n)))
        ip1 = sum(gr.inner_product(x, y) for x, y in zip(PV.components, W.components))
        ip2 = sum(gr.inner_product(x, y) for x, y in zip(V.components,
                                                         leray_project(W).components))
        scale = math.sqrt(sum(lebesgue_norm(c, 2) ** 2 for c in V.components)) * \
            math.sqrt(sum(lebesgue_norm(c, 2) ** 2 for c in W.components))
        r = max(r, abs(ip1 - ip2) / scale)
        worst["leray"] = max(worst["leray"], r)
        rows.append(ScanRow("identities", n, N, L, 0.0, seed, r, 1e-10, r / 1e-10))

        # Littlewood-Paley partition on the representable annulus
        br = BandRange.widest(grid)
        f = lp.restrict_annulus(random_field(grid, rng), *br.annulus())
        total = lp.project_band(f, br.k_min)
        for k in range(br.k_min + 1, br.k_max + 1):
            total = total + lp.project_band(f, k)
        r = gr.relative_l2_difference(total, f)
        worst["lp_partition"] = max(worst["lp_partition"], r)
        rows.append(ScanRow("identities", n, N, L, 1.0, seed, r, 1e-10, r / 1e-10))

        # null frame decomposition on closed-form free waves, 20 directions
        u0 = random_field(grid, rng, 0.2, 1.0)
        u1 = random_field(grid, rng, 0.2, 1.0)
        wave = pmx.HalfWaveField(grid, u0.freq_values, u1.freq_values)
        box = wave.box()
        t_test = 0.37 * L / 8.0
        for k_dir in range(20):
            wdir = rng.standard_normal(n)
            wdir /= np.linalg.norm(wdir)
            lplus, _ = gauge.null_derivative(wave, wdir, +1)
            lpm, _ = gauge.null_derivative(lplus, wdir, -1)
            sym = -4.0 * np.pi ** 2 * (grid.xi_norm ** 2
                                       - np.tensordot(wdir, grid.xi, axes=(0, 0)) ** 2)
            composed = lpm + wave.mul_symbol(sym)
            diff = composed.sample(t_test) - box.sample(t_test)
            r = lebesgue_norm(diff, 2) / max(lebesgue_norm(wave.mul_symbol(
                -4.0 * np.pi ** 2 * grid.xi_norm ** 2).sample(t_test), 2), 1e-300)
            worst["box_null"] = max(worst["box_null"], r)
        rows.append(ScanRow("identities", n, N, L, 2.0, seed, worst["box_null"], 1e-10,
                            worst["box_null"] / 1e-10))

        # null-form decomposition of the spatial current (alias-free bands)
        hi_band = grid.N / (8.0 * L)
        phi = random_field(grid, rng, 2.0 / L, hi_band)
        Asp = random_divergence_free(grid, rng, 2.0 / L, hi_band)
        r_mod, r_lit = null_form_check(phi, Asp)
        worst["null_form"] = max(worst["null_form"], r_mod)
        worst["null_form_literal_gap"] = min(worst["null_form_literal_gap"], r_lit)
        rows.append(ScanRow("identities", n, N, L, 3.0, seed, r_mod, r_lit,
                            r_mod / max(r_lit, 1e-300)))

        # phase machinery: defect identity, realness, split, adjoint.  The
        # identities hold per direction and per coefficient, so probe
        # directions and a mode subsample suffice (and keep the suite fast).
        conn = make_free_connection(grid, band, 1e-2, seed, index=idx)
        cut = pmx.AnnulusCutoff(rho=N / (8.0 * L)).validate(grid)
        modes = cut.modes(grid)
        pick = stream(seed, 500 + idx).choice(len(modes), size=min(32, len(modes)),
                                              replace=False)
        sub_cache = pmx.DirectionCache.build(grid, modes[np.sort(pick)], policy="exact")
        probe_rng = stream(seed, 600 + idx)
        probe_dirs = probe_rng.standard_normal((6, n))
        probe_dirs /= np.linalg.norm(probe_dirs, axis=1, keepdims=True)
        probe_modes = np.zeros((6, n), dtype=int)
        probe_modes[:, 0] = 1
        probe_cache = pmx.DirectionCache(grid, probe_modes, probe_dirs,
                                         np.arange(6), 0.0)
        for sign in (+1, -1):
            fam = pmx.PhaseFamily(conn, sign, config.sigma, probe_cache)
            tgrid = np.linspace(0.0, 0.45 * L / 2.0, 5)
            rep = pmx.phase_defect(fam, tgrid)
            worst["phase_defect"] = max(worst["phase_defect"], rep.max_residual)
            worst["psi_real"] = max(worst["psi_real"], fam.max_imag_defect)
            # threshold above the first dyadic piece so both halves carry weight
            theta_star = 4.01 * min(fam.thetas.values())
            fam_lo, fam_hi, part_defect = pmx.split_phase_at(fam, theta_star)
            psi_sum = fam_lo.psi(0.3, 0) + fam_hi.psi(0.3, 0)
            psi_all = fam.psi(0.3, 0)
            r_split = float(np.linalg.norm(psi_sum - psi_all)
                            / max(np.linalg.norm(psi_all), 1e-300))
            worst["phase_split"] = max(worst["phase_split"], max(part_defect, r_split))

            op = pmx.WaveOperator(pmx.PhaseFamily(conn, sign, config.sigma, sub_cache),
                                  cut, check_cover=False)
            live = np.zeros(grid.shape, dtype=bool)
            live.ravel()[sub_cache.flat_index] = True
            h = (stream(seed, 100 + idx).standard_normal(grid.shape)
                 + 1j * stream(seed, 200 + idx).standard_normal(grid.shape)) * live
            fld = ScalarField(grid, stream(seed, 300 + idx).standard_normal(grid.shape)
                              + 1j * stream(seed, 400 + idx).standard_normal(grid.shape))
            u = op.apply(0.3, h)
            lhs_ip = gr.inner_product(u, fld)
            h_masked = np.where(live, h, 0.0)
            rhs_ip = np.vdot(np.where(live, op.apply_adjoint(0.3, fld), 0.0),
                             h_masked) / grid.L ** grid.n
            r = abs(lhs_ip - rhs_ip) / max(abs(lhs_ip), 1e-300)
            worst["adjoint"] = max(worst["adjoint"], r)
        rows.append(ScanRow("identities", n, N, L, 4.0, seed, worst["phase_defect"],
                            1e-10, worst["phase_defect"] / 1e-10))

    for key in ("leray", "lp_partition", "box_null", "null_form", "phase_defect",
                "psi_real", "adjoint", "phase_split"):
        records.append(AcceptanceRecord.bounded(f"identities.{key}", worst[key],
                                                hi=1e-10, seconds=0.0))
    records.append(AcceptanceRecord.bounded("identities.null_form_literal_gap",
                                            worst["null_form_literal_gap"], lo=1e-6,
                                            seconds=0.0))
    records.append(AcceptanceRecord.bounded("identities.runtime_seconds", elapsed(),
                                            hi=300.0, seconds=elapsed()))
    return records, rows


# ---------------------------------------------------------------------------
# suite: lp-suite (criteria 3 and 4)

def run_lp_suite(config: ExperimentConfig):
    records, rows = [], []
    seed = config.seed
    elapsed = _timer()
    n = config.n if config.n is not None else 2
    N = config.N if config.N is not None else 512
    L = config.L if config.L is not None else 1.0
    grid = GridSpec(n, N, L)
    br = BandRange.widest(grid)
    ks = [k for k in range(br.k_min + 2, br.k_max + 1)]

    # Bernstein over the saturating single-packet ensemble
    pairs = [(2, 4), (2, np.inf), (1, 2)]
    for p, q in pairs:
        ratios_by_k = []
        for k in ks:
            vals = []
            for s in range(6):
                f = packet_field(grid, stream(seed, 1000 + 97 * k + s), k, packets=1)
                vals.append(lp.bernstein_ratio(f, k, p, q))
            ratios_by_k.append(float(np.mean(vals)))
            for v in vals:
                rows.append(ScanRow("lp-suite", n, N, L, float(k), seed, v,
                                    2.0 ** (n * k * ((0 if p == np.inf else 1 / p)
                                                     - (0 if q == np.inf else 1 / q))), v))
        spread = max(ratios_by_k) / min(ratios_by_k)
        slope = fit_loglog([2.0 ** k for k in ks], ratios_by_k)
        tag = f"p{p}_q{'inf' if q == np.inf else q}"
        records.append(AcceptanceRecord.bounded(f"bernstein.spread.{tag}", spread, hi=10.0))
        records.append(AcceptanceRecord.bounded(f"bernstein.slope.{tag}", slope,
                                                lo=-0.1, hi=0.1))

    # commutator: slope -1 in 2^k and bounded normalized ratio; f sits in the
    # lowest band so every scanned shell is well separated from grad f
    smooth_band = BandRange(br.k_min, br.k_min)
    comm_ks = ks[:4]
    norms_by_k = {k: [] for k in comm_ks}
    ratios = []
    for s in range(12):
        f = flat_spectrum_field(grid, stream(seed, 2000 + s), smooth_band, real=True)
        g = flat_spectrum_field(grid, stream(seed, 3000 + s),
                                BandRange(br.k_min, max(comm_ks) + 1))
        for k in comm_ks:
            c = lp.commutator_field(f, g, k)
            norms_by_k[k].append(lebesgue_norm(c, 2))
            ratios.append(lp.commutator_ratio(f, g, k, np.inf, 2, 2))
            rows.append(ScanRow("lp-suite", n, N, L, float(k), seed,
                                norms_by_k[k][-1], 2.0 ** (-k), ratios[-1]))
    mean_norms = [float(np.mean(norms_by_k[k])) for k in comm_ks]
    slope = fit_loglog([2.0 ** k for k in comm_ks], mean_norms)
    records.append(AcceptanceRecord.bounded("commutator.slope", slope, lo=-1.15, hi=-0.85))
    records.append(AcceptanceRecord.bounded("commutator.ratio_max", max(ratios), hi=10.0))

    # embedding chain: l2 <= l1 Besov, Littlewood-Paley lower bound, p-upgrade
    emb = {"besov_l2_vs_l1": 0.0, "lp_lower": 0.0, "p_upgrade": 0.0}
    for s in range(20):
        f = flat_spectrum_field(grid, stream(seed, 4000 + s), br)
        b2 = besov_norm(f, 2, 4, 2, br)
        b1 = besov_norm(f, 2, 4, 1, br)
        emb["besov_l2_vs_l1"] = max(emb["besov_l2_vs_l1"], b2 / b1)
        emb["lp_lower"] = max(emb["lp_lower"],
                              lebesgue_norm(f, 4) / besov_norm(f, 4, 4, 2, br))
        emb["p_upgrade"] = max(emb["p_upgrade"],
                               besov_norm(f, 3, 4, 2, br) / besov_norm(f, 2, 4, 2, br))
    records.append(AcceptanceRecord.bounded("embedding.besov_l2_vs_l1",
                                            emb["besov_l2_vs_l1"], hi=1.0 + 1e-12))
    records.append(AcceptanceRecord.bounded("embedding.littlewood_constant",
                                            emb["lp_lower"], hi=10.0))
    records.append(AcceptanceRecord.bounded("embedding.bernstein_upgrade_constant",
                                            emb["p_upgrade"], hi=10.0))
    records.append(AcceptanceRecord.bounded("lp-suite.runtime_seconds", elapsed(),
                                            hi=240.0, seconds=elapsed()))
    return records, rows


# ---------------------------------------------------------------------------
# suite: coulomb-gain (criterion 2)

def run_coulomb_gain(config: ExperimentConfig):
    records, rows = [], []
    seed = config.seed
    elapsed = _timer()
    n = config.n if config.n is not None else 3
    N = config.N if config.N is not None else 32
    L = config.L if config.L is not None else 8.0
    grid = GridSpec(n, N, L)
    thetas = [2.0 ** (-j) for j in range(2, 7)]
    dir_rng = stream(seed, 1)
    dirs = []
    for _ in range(20):
        v = dir_rng.standard_normal(n)
        dirs.append(v / np.linalg.norm(v))

    def one_field(s):
        rng = stream(seed, 100 + s)
        B = random_divergence_free(grid, rng, 2.0 / L, grid.nyquist * 0.9)
        worst_local = 0.0
        local_rows = []
        for w in dirs:
            for theta in thetas:
                for mode in ("leq", "band"):
                    ratio = coulomb_gain_ratio(B, Direction(w), theta, mode)
                    worst_local = max(worst_local, ratio)
                    local_rows.append(ScanRow("coulomb-gain", n, N, L, theta, seed,
                                              ratio, 4.0, ratio / 4.0))
        return worst_local, local_rows

    results = parallel_map(one_field, range(50))
    worst = max(r[0] for r in results)
    for _, lr in results:
        rows.extend(lr)
    records.append(AcceptanceRecord.bounded("coulomb.per_mode_ratio", worst, hi=4.0))
    records.append(AcceptanceRecord.bounded("coulomb.runtime_seconds", elapsed(),
                                            hi=120.0, seconds=elapsed()))
    return records, rows


# ---------------------------------------------------------------------------
# suite: mkg-evolve (criterion 7)

def _mkg_data(grid: GridSpec, eps: float, seed: int):
    rng = stream(seed, 0)
    lo, hi = 2.0 / grid.L, grid.N / (8.0 * grid.L)
    f = random_field(grid, rng, lo, hi) * eps
    g = random_field(grid, rng, lo, hi) * eps
    a = random_divergence_free(grid, rng, lo, hi)
    adot = random_divergence_free(grid, rng, lo, hi)
    a = VectorField(tuple(c * eps for c in a.components), divergence_free=True)
    adot = VectorField(tuple(c * eps for c in adot.components), divergence_free=True)
    return mkg.make_compatible_data(f, g, a, adot)


def run_mkg_evolve(config: ExperimentConfig):
    records, rows = [], []
    seed = config.seed
    elapsed = _timer()
    n = config.n if config.n is not None else 3
    N = config.N if config.N is not None else 32
    L = config.L if config.L is not None else 8.0
    eps = config.eps_list[min(2, len(config.eps_list) - 1)]
    grid = GridSpec(n, N, L)
    state = _mkg_data(grid, eps, seed)
    rep0 = mkg.constraint_residuals(state)
    t_final = config.t_max if config.t_max is not None else L / 4.0
    dt = min(0.05, mkg.stability_limit(grid))
    steps = int(round(t_final / dt))
    drift = 0.0
    gauss = rep0.gauss_residual
    divres = rep0.div_residual
    s = state
    for i in range(steps):
        s = mkg.step(s, dt)
        rep = mkg.constraint_residuals(s)
        drift = max(drift, abs(rep.total - rep0.total) / rep0.total)
        gauss = max(gauss, rep.gauss_residual)
        divres = max(divres, rep.div_residual)
        rows.append(ScanRow("mkg-evolve", n, N, L, s.t, seed, rep.total, rep0.total,
                            rep.total / rep0.total))
    records.append(AcceptanceRecord.bounded("mkg.energy_drift", drift, hi=1e-5))
    records.append(AcceptanceRecord.bounded("mkg.gauss_residual", gauss, hi=1e-6))
    records.append(AcceptanceRecord.bounded("mkg.div_drift", divres, hi=1e-9))

    # integrator order by Richardson self-convergence at visible data size
    order_grid = GridSpec(2, 32, L)
    st2 = _mkg_data(order_grid, 0.1, seed)
    T = 1.0
    dts = [0.1, 0.05, 0.025]
    sols = [mkg.evolve(st2, T, d) for d in dts]
    diffs = [lebesgue_norm(sols[i].phi - sols[i + 1].phi, 2) for i in range(len(dts) - 1)]
    order = fit_loglog(dts[:-1], diffs)
    records.append(AcceptanceRecord.bounded("mkg.integrator_order", order, lo=1.8, hi=2.2))
    for d, e in zip(dts[:-1], diffs):
        rows.append(ScanRow("mkg-evolve", 2, 32, L, d, seed, e, d ** 2, e / d ** 2))

    # scaling-symmetry replay at lambda = 2
    lam = 2.0
    gl = GridSpec(2, 32, L * lam)

    def rescale(fld, power, real=False):
        return ScalarField(gl, fld.phys_values / lam ** power, real_valued=real)

    st_l = mkg.make_compatible_data(
        rescale(st2.phi, 1), rescale(st2.phi_t, 2),
        VectorField(tuple(rescale(c, 1, True) for c in st2.A_sp.components),
                    divergence_free=True),
        VectorField(tuple(rescale(c, 2, True) for c in st2.A_sp_t.components),
                    divergence_free=True))
    s_base = mkg.evolve(st2, T, 0.05)
    s_scaled = mkg.evolve(st_l, lam * T, lam * 0.05)
    replay = gr.relative_l2_difference(
        ScalarField(order_grid, s_scaled.phi.phys_values * lam), s_base.phi)
    records.append(AcceptanceRecord.bounded("mkg.scaling_replay", replay, hi=1e-6))
    records.append(AcceptanceRecord.bounded("mkg.runtime_seconds", elapsed(),
                                            hi=600.0, seconds=elapsed()))
    return records, rows


# ---------------------------------------------------------------------------
# suite: parametrix-residual (criterion 6 a, b)

def run_parametrix_residual(config: ExperimentConfig):
    records, rows = [], []
    seed = config.seed
    elapsed = _timer()
    grid, band, cut, cache, _ = _parametrix_setup(seed=seed, sigma=config.sigma,
                                                  policy="bucketed")
    h = (stream(seed, 10).standard_normal(grid.shape)
         + 1j * stream(seed, 11).standard_normal(grid.shape)) * (cut.symbol(grid) > 0)
    tgrid = np.array([0.2, 0.5, 0.8]) * (config.t_max / 0.8 if config.t_max else 1.0)

    # (a) dual-path Richardson
    conn = make_free_connection(grid, band, 1e-2, seed)
    fam = pmx.PhaseFamily(conn, +1, config.sigma, cache)
    op = pmx.WaveOperator(fam, cut)
    dts = [0.1, 0.05, 0.025, 0.0125]
    diffs = []
    for d in dts:
        rr = pmx.residual_check(op, h, tgrid, d)
        diffs.append(float(np.mean(rr.mutual_differences)))
        rows.append(ScanRow("parametrix-residual", grid.n, grid.N, grid.L, d, seed,
                            diffs[-1], d ** 2, diffs[-1] / d ** 2))
    order = fit_loglog(dts, diffs)
    records.append(AcceptanceRecord.bounded("parametrix.dual_path_order", order,
                                            lo=1.8, hi=2.2))

    # (b) eps scans: residual N2 norm and data matching errors
    n2_vals, match_vals = [], []
    f = random_field(grid, stream(seed, 20), cut.rho, 2 * cut.rho)
    g2 = random_field(grid, stream(seed, 21), cut.rho, 2 * cut.rho)
    for eps in config.eps_list:
        ce = make_free_connection(grid, band, eps, seed)
        fp = pmx.PhaseFamily(ce, +1, config.sigma, cache)
        fm = pmx.PhaseFamily(ce, -1, config.sigma, cache)
        o1, o2 = pmx.WaveOperator(fp, cut), pmx.WaveOperator(fm, cut)
        rr = pmx.residual_check(o1, h, tgrid, 0.02)
        m = pmx.match_data(o1, o2, f, g2)
        n2_vals.append(rr.residual_n2)
        match_vals.append(m.position_error + m.velocity_error)
        rows.append(ScanRow("parametrix-residual", grid.n, grid.N, grid.L, eps, seed,
                            rr.residual_n2, match_vals[-1],
                            rr.residual_n2 / max(match_vals[-1], 1e-300)))
    records.append(AcceptanceRecord.bounded(
        "parametrix.residual_eps_slope", fit_loglog(config.eps_list, n2_vals), lo=0.5))
    records.append(AcceptanceRecord.bounded(
        "parametrix.match_eps_slope", fit_loglog(config.eps_list, match_vals), lo=0.5))

    # free case matches data exactly
    zconn = pmx.FreeConnection.zero(grid, band)
    zp = pmx.WaveOperator(pmx.PhaseFamily(zconn, +1, config.sigma, cache), cut)
    zm = pmx.WaveOperator(pmx.PhaseFamily(zconn, -1, config.sigma, cache), cut)
    mz = pmx.match_data(zp, zm, f, g2)
    records.append(AcceptanceRecord.bounded(
        "parametrix.free_match", mz.position_error + mz.velocity_error, hi=1e-12))
    records.append(AcceptanceRecord.bounded("parametrix.runtime_seconds", elapsed(),
                                            hi=900.0, seconds=elapsed()))
    return records, rows


# ---------------------------------------------------------------------------
# suite: unitarity (criterion 6 c)

def run_unitarity(config: ExperimentConfig):
    records, rows = [], []
    seed = config.seed
    elapsed = _timer()
    grid, band, cut, cache, _ = _parametrix_setup(seed=seed, sigma=config.sigma,
                                                  policy="bucketed")
    times = np.linspace(0.0, 0.45 * grid.L / 2.0, config.t_samples)
    h = (stream(seed, 30).standard_normal(grid.shape)
         + 1j * stream(seed, 31).standard_normal(grid.shape)) * (cut.symbol(grid) > 0)

    zconn = pmx.FreeConnection.zero(grid, band)
    zop = pmx.WaveOperator(pmx.PhaseFamily(zconn, +1, config.sigma, cache), cut)
    free_norm = zop.operator_norm_at(float(times[1]), stream(seed, 32), tol=1e-12)
    records.append(AcceptanceRecord.bounded("unitarity.free_norm", abs(free_norm - 1.0),
                                            hi=1e-10))

    eps = config.eps_list[min(2, len(config.eps_list) - 1)]
    norm_excess = 0.0
    for sign in (+1, -1):
        conn = make_free_connection(grid, band, eps, seed)
        op = pmx.WaveOperator(pmx.PhaseFamily(conn, sign, config.sigma, cache), cut)
        rep = pmx.unitarity_scan(op, times, stream(seed, 33), h=h)
        for t, nrm in zip(rep.times, rep.operator_norms):
            norm_excess = max(norm_excess, nrm - 1.0)
            rows.append(ScanRow("unitarity", grid.n, grid.N, grid.L, float(t), seed,
                                nrm, 1.0 + 10.0 * eps, nrm / (1.0 + 10.0 * eps)))
    records.append(AcceptanceRecord.bounded("unitarity.norm_excess", norm_excess,
                                            hi=10.0 * eps))

    # derivative commutation defects scale with eps
    worst = 0.0
    for eps_i in config.eps_list:
        conn = make_free_connection(grid, band, eps_i, seed)
        op = pmx.WaveOperator(pmx.PhaseFamily(conn, +1, config.sigma, cache), cut)
        rep = pmx.unitarity_scan(op, [times[1]], stream(seed, 34), h=h)
        gd, td = rep.gradient_defects[0], rep.time_defects[0]
        worst = max(worst, gd / eps_i, td / eps_i)
        rows.append(ScanRow("unitarity", grid.n, grid.N, grid.L, eps_i, seed, gd, td,
                            gd / max(td, 1e-300)))
    records.append(AcceptanceRecord.bounded("unitarity.derivative_defect_over_eps",
                                            worst, hi=10.0))
    records.append(AcceptanceRecord.bounded("unitarity.runtime_seconds", elapsed(),
                                            hi=600.0, seconds=elapsed()))
    return records, rows


# ---------------------------------------------------------------------------
# suite: dispersive (criterion 5)

def _point_source(grid: GridSpec) -> ScalarField:
    vals = np.zeros(grid.shape)
    vals[(0,) * grid.n] = 1.0 / grid.cell_volume
    return ScalarField(grid, vals, real_valued=True)


def run_dispersive(config: ExperimentConfig):
    records, rows = [], []
    seed = config.seed
    elapsed = _timer()

    # free decay, n = 3
    g3 = GridSpec(3, 128, 8.0)
    cut3 = pmx.AnnulusCutoff(rho=2.5).validate(g3)
    taus3 = np.geomspace(1.0, g3.L / 4.0, 9)
    scan3 = pmx.dispersive_scan(None, taus3, _point_source(g3), grid=g3, cutoff=cut3,
                                sign=+1)
    records.append(AcceptanceRecord.bounded("dispersive.free_slope_n3", scan3.slope,
                                            lo=-1.15, hi=-0.85))
    for t, v in zip(scan3.taus, scan3.values):
        rows.append(ScanRow("dispersive", 3, 128, 8.0, t, seed, v, t ** (-1.0), v * t))

    # free decay, n = 2
    g2 = GridSpec(2, 512, 16.0)
    cut2 = pmx.AnnulusCutoff(rho=4.0).validate(g2)
    taus2 = np.geomspace(1.0, g2.L / 4.0, 9)
    scan2 = pmx.dispersive_scan(None, taus2, _point_source(g2), grid=g2, cutoff=cut2,
                                sign=+1)
    records.append(AcceptanceRecord.bounded("dispersive.free_slope_n2", scan2.slope,
                                            lo=-0.65, hi=-0.35))
    for t, v in zip(scan2.taus, scan2.values):
        rows.append(ScanRow("dispersive", 2, 512, 16.0, t, seed, v, t ** (-0.5),
                            v * t ** 0.5))

    # perturbed decay vs free on the same grid (n = 2)
    gp = GridSpec(2, 256, 8.0)
    cutp = pmx.AnnulusCutoff(rho=4.0).validate(gp)
    tausp = np.geomspace(1.0, gp.L / 4.0, 7)
    fp = _point_source(gp)
    free_scan = pmx.dispersive_scan(None, tausp, fp, grid=gp, cutoff=cutp, sign=+1)
    band = BandRange(-3, -2)
    eps = config.eps_list[min(2, len(config.eps_list) - 1)]
    conn = make_free_connection(gp, band, eps, seed)
    cache = pmx.DirectionCache.build(gp, cutp.modes(gp), policy="bucketed", eta_dir=0.05)
    fam = pmx.PhaseFamily(conn, +1, config.sigma, cache)
    op = pmx.WaveOperator(fam, cutp)
    pert_scan = pmx.dispersive_scan(op, tausp, fp)
    gap = abs(pert_scan.slope - free_scan.slope)
    records.append(AcceptanceRecord.bounded("dispersive.perturbed_slope_gap", gap, hi=0.15))
    for t, v, w in zip(pert_scan.taus, pert_scan.values, free_scan.values):
        rows.append(ScanRow("dispersive", 2, 256, 8.0, t, seed, v, w, v / w))

    # bucketing policy error (recorded, not gated tightly)
    bucket_err = pmx.bucketing_error(op, float(tausp[0]),
                                     cutp.symbol(gp) * (1.0 + 0j), subsample=48)
    records.append(AcceptanceRecord.bounded("dispersive.bucketing_error", bucket_err,
                                            hi=1e-2))
    records.append(AcceptanceRecord.bounded("dispersive.runtime_seconds", elapsed(),
                                            hi=600.0, seconds=elapsed()))
    return records, rows


# ---------------------------------------------------------------------------
# suite: norms (criterion 8 plus recorded constants)

def run_norms(config: ExperimentConfig):
    records, rows = [], []
    seed = config.seed
    elapsed = _timer()

    exps = exponents(6, Fraction(0))
    ok_exp = (exps.p_star == Fraction(10, 3) and exps.p_sstar == Fraction(3)
              and exps.p_ssstar == Fraction(12, 5))
    lo_s, hi_s = sigma_window(6)
    ok_sigma = (lo_s == Fraction(7, 15) and hi_s == Fraction(1, 2))
    records.append(AcceptanceRecord.bounded("exponents.n6_values",
                                            0.0 if ok_exp else 1.0, hi=0.5))
    records.append(AcceptanceRecord.bounded("exponents.sigma_window",
                                            0.0 if ok_sigma else 1.0, hi=0.5))
    rows.append(ScanRow("norms", 6, 0, 0.0, 0.0, seed, float(exps.p_star),
                        float(exps.p_sstar), float(exps.p_ssstar)))

    # measured Besov <-> Sobolev equivalence constant (recorded)
    grid = GridSpec(2, 128, 1.0)
    br = BandRange.widest(grid)
    ratios = []
    for s in range(16):
        f = flat_spectrum_field(grid, stream(seed, 500 + s), br)
        b = besov_norm(f, 2, 4, 2, br)
        h = gr.sobolev_norm(f, grid.n / 2.0 - grid.n / 4.0)
        ratios.append(h / b)
        rows.append(ScanRow("norms", 2, 128, 1.0, float(s), seed, h, b, h / b))
    records.append(AcceptanceRecord.bounded("norms.besov_sobolev_ratio_max",
                                            max(ratios), lo=0.25, hi=4.0))
    records.append(AcceptanceRecord.bounded("norms.besov_sobolev_ratio_min",
                                            min(ratios), lo=0.25, hi=4.0))

    # spacetime product estimate measured at n = 4
    g4 = GridSpec(4, 16, 4.0)
    br4 = BandRange.widest(g4)
    rng = stream(seed, 600)
    times = np.linspace(0.0, 1.0, 3)
    fs = [flat_spectrum_field(g4, rng, br4) for _ in times]
    gs = [flat_spectrum_field(g4, rng, br4) for _ in times]
    F = SpacetimeField(times, tuple(fs))
    G = SpacetimeField(times, tuple(gs))
    ratio = lp.spacetime_product_ratio(F, G, p=2, q=2, band_range=br4)
    records.append(AcceptanceRecord.bounded("norms.spacetime_product_ratio", ratio,
                                            hi=100.0))
    rows.append(ScanRow("norms", 4, 16, 4.0, 0.0, seed, ratio, 100.0, ratio / 100.0))

    # decomposable surrogate: reduction for direction-independent families
    grid2, band, cut, cache, conn = _parametrix_setup(N=32, seed=seed, sigma=config.sigma,
                                                      policy="bucketed", eta_dir=0.2)
    theta = 0.6
    B = cache.num_buckets
    tgrid = np.linspace(0.0, 1.0, 3)
    base = random_field(grid2, stream(seed, 700), cut.rho, 2 * cut.rho)
    const_fields = [SpacetimeField(tgrid, tuple(base for _ in tgrid)) for _ in range(B)]
    vol = float(np.sum(cut.symbol(grid2) > 0) / grid2.L ** grid2.n)  # annulus measure
    val, tail = pmx.decomposable_surrogate(cache.directions, const_fields, theta, 2, 2,
                                           annulus_volume=vol)
    expect = theta ** ((1 - grid2.n) / 2.0) * math.sqrt(vol) * \
        lp.spacetime_norm(const_fields[0], 2, lambda s: lebesgue_norm(s, 2))
    rel = abs(val - expect) / expect
    records.append(AcceptanceRecord.bounded("norms.surrogate_reduction", rel, hi=1e-12))
    rows.append(ScanRow("norms", grid2.n, grid2.N, grid2.L, theta, seed, val, expect,
                        val / expect))

    # surrogate of the phase-derivative family scales with eps (L^inf_x family)
    fam = pmx.PhaseFamily(conn, +1, config.sigma, cache)
    psi_fields = []
    for b in range(B):
        slices = []
        for t in tgrid:
            sl = fam.slice_at(float(t), b)
            mag = np.sqrt(sl.psi_t ** 2 + sum(g ** 2 for g in sl.grad))
            slices.append(ScalarField(grid2, mag, real_valued=True))
        psi_fields.append(SpacetimeField(tgrid, tuple(slices)))
    val_psi, tail_psi = pmx.decomposable_surrogate(cache.directions, psi_fields, theta,
                                                   2, np.inf, annulus_volume=vol)
    records.append(AcceptanceRecord.bounded("norms.surrogate_phase_over_eps",
                                            val_psi / 1e-2, hi=20.0))
    rows.append(ScanRow("norms", grid2.n, grid2.N, grid2.L, 1e-2, seed, val_psi,
                        tail_psi, val_psi / 1e-2))
    records.append(AcceptanceRecord.bounded("norms.runtime_seconds", elapsed(),
                                            hi=120.0, seconds=elapsed()))
    return records, rows


EXPERIMENTS = {
    "identities": run_identities,
    "lp-suite": run_lp_suite,
    "coulomb-gain": run_coulomb_gain,
    "mkg-evolve": run_mkg_evolve,
    "parametrix-residual": run_parametrix_residual,
    "unitarity": run_unitarity,
    "dispersive": run_dispersive,
    "norms": run_norms,
}


# ---------------------------------------------------------------------------
# run / report plumbing

def run(config: ExperimentConfig):
    """Execute the configured suite; write CSV, machine summary, and report.

    Returns (records, paths).  Exit-status handling lives in the CLI."""
    config = config.validate()
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    records, rows = EXPERIMENTS[config.experiment](config)
    chash = config.config_hash()
    csv_path = os.path.join(out_dir, f"{config.experiment}.csv")
    write_scan_csv(csv_path, rows, chash)
    summary_path = os.path.join(out_dir, "summary.json")
    _atomic_write(summary_path, machine_summary(config, records))
    report_path = os.path.join(out_dir, "report.txt")
    _atomic_write(report_path, report_text(records, chash))
    return records, {"csv": csv_path, "summary": summary_path, "report": report_path}


def machine_summary(config: ExperimentConfig, records) -> str:
    """Deterministic machine summary: stable ordering, no wall-clock data
    (runtime-budget records live in the human report only)."""
    payload = {
        "config_hash": config.config_hash(),
        "experiment": config.experiment,
        "records": [
            {"id": r.id, "value": _fmt(r.value), "lo": _fmt(r.lo), "hi": _fmt(r.hi),
             "passed": r.passed}
            for r in sorted(records, key=lambda r: r.id)
            if not r.id.endswith("runtime_seconds")
        ],
    }
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def report_text(records, config_hash: str) -> str:
    ordered = sorted(records, key=lambda r: (r.passed, r.id))
    lines = [f"cronlab report  (config {config_hash})"]
    for r in ordered:
        status = "PASS" if r.passed else "FAIL"
        bound = []
        if math.isfinite(r.lo):
            bound.append(f">= {r.lo:g}")
        if math.isfinite(r.hi):
            bound.append(f"<= {r.hi:g}")
        lines.append(f"[{status}] {r.id}: {r.value:.6g}  ({' and '.join(bound) or 'recorded'})")
    n_fail = sum(1 for r in records if not r.passed)
    lines.append(f"{len(records) - n_fail}/{len(records)} criteria passed")
    return "\n".join(lines) + "\n"


def all_passed(records) -> bool:
    return all(r.passed for r in records)
