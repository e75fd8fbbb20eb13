"""Acceptance gate: every numbered criterion runs at its stated tolerance and
prints one pass/fail line.  The suites come from the experiment harness with
their default (pinned) grids and the default seed.
"""

import numpy as np
from cronlab.harness import ExperimentConfig, run

_RESULTS = {}


def _suite(name, tmp_path_factory):
    if name not in _RESULTS:
        out = tmp_path_factory.mktemp(f"acc_{name.replace('-', '_')}")
        records, paths = run(ExperimentConfig(experiment=name, out_dir=str(out)))
        _RESULTS[name] = {r.id: r for r in records}
    return _RESULTS[name]


def _check(record, label):
    bound = []
    if np.isfinite(record.lo):
        bound.append(f">= {record.lo:g}")
    if np.isfinite(record.hi):
        bound.append(f"<= {record.hi:g}")
    status = "PASS" if record.passed else "FAIL"
    print(f"[{status}] {label}: {record.id} = {record.value:.6g} ({' and '.join(bound)})")
    assert record.passed, f"{label}: {record.id} = {record.value} violates {bound}"


# -- criterion 1: exact identities at n in {2,3}, N in {32,64}, <= 1e-10 ------

def test_criterion_1_exact_identities(tmp_path_factory):
    recs = _suite("identities", tmp_path_factory)
    for key in ("identities.leray", "identities.lp_partition", "identities.box_null",
                "identities.null_form", "identities.phase_defect", "identities.psi_real",
                "identities.adjoint", "identities.phase_split"):
        _check(recs[key], "criterion-1")
    _check(recs["identities.runtime_seconds"], "criterion-1 (<= 5 min)")


# -- criterion 2: divergence-free angular gain --------------------------------

def test_criterion_2_coulomb_gain(tmp_path_factory):
    recs = _suite("coulomb-gain", tmp_path_factory)
    _check(recs["coulomb.per_mode_ratio"], "criterion-2")
    _check(recs["coulomb.runtime_seconds"], "criterion-2 (<= 2 min)")


# -- criterion 3: commutator scaling -------------------------------------------

def test_criterion_3_commutator(tmp_path_factory):
    recs = _suite("lp-suite", tmp_path_factory)
    _check(recs["commutator.slope"], "criterion-3")
    _check(recs["commutator.ratio_max"], "criterion-3")


# -- criterion 4: Bernstein ratios ---------------------------------------------

def test_criterion_4_bernstein(tmp_path_factory):
    recs = _suite("lp-suite", tmp_path_factory)
    for tag in ("p2_q4", "p2_qinf", "p1_q2"):
        _check(recs[f"bernstein.spread.{tag}"], "criterion-4")
        _check(recs[f"bernstein.slope.{tag}"], "criterion-4")
    _check(recs["lp-suite.runtime_seconds"], "criterion-3/4 (<= budget)")


# -- criterion 5: dispersive decay ---------------------------------------------

def test_criterion_5_dispersive(tmp_path_factory):
    recs = _suite("dispersive", tmp_path_factory)
    _check(recs["dispersive.free_slope_n3"], "criterion-5")
    _check(recs["dispersive.free_slope_n2"], "criterion-5")
    _check(recs["dispersive.perturbed_slope_gap"], "criterion-5")
    _check(recs["dispersive.runtime_seconds"], "criterion-5 (<= 10 min)")


# -- criterion 6: parametrix accuracy -------------------------------------------

def test_criterion_6_parametrix(tmp_path_factory):
    recs = _suite("parametrix-residual", tmp_path_factory)
    _check(recs["parametrix.dual_path_order"], "criterion-6a")
    _check(recs["parametrix.residual_eps_slope"], "criterion-6b")
    _check(recs["parametrix.match_eps_slope"], "criterion-6b")
    _check(recs["parametrix.runtime_seconds"], "criterion-6 (<= 15 min)")
    urecs = _suite("unitarity", tmp_path_factory)
    _check(urecs["unitarity.norm_excess"], "criterion-6c")
    _check(urecs["unitarity.free_norm"], "criterion-6c")


# -- criterion 7: the gauge-wave evolution --------------------------------------

def test_criterion_7_mkg_evolution(tmp_path_factory):
    recs = _suite("mkg-evolve", tmp_path_factory)
    _check(recs["mkg.energy_drift"], "criterion-7")
    _check(recs["mkg.gauss_residual"], "criterion-7")
    _check(recs["mkg.div_drift"], "criterion-7")
    _check(recs["mkg.integrator_order"], "criterion-7")
    _check(recs["mkg.scaling_replay"], "criterion-7")
    _check(recs["mkg.runtime_seconds"], "criterion-7 (<= 10 min)")


# -- criterion 8: exponent bookkeeping in exact rationals ------------------------

def test_criterion_8_exponents(tmp_path_factory):
    recs = _suite("norms", tmp_path_factory)
    _check(recs["exponents.n6_values"], "criterion-8")
    _check(recs["exponents.sigma_window"], "criterion-8")
    _check(recs["norms.runtime_seconds"], "criterion-8 (fast)")


# -- criterion 9: determinism ----------------------------------------------------

def test_criterion_9_determinism(tmp_path_factory):
    outs = [tmp_path_factory.mktemp(f"det{i}") for i in range(2)]
    blobs = []
    for out in outs:
        _, paths = run(ExperimentConfig(experiment="norms", out_dir=str(out)))
        blobs.append((open(paths["csv"], "rb").read(),
                      open(paths["summary"], "rb").read()))
    ok = blobs[0] == blobs[1]
    print(f"[{'PASS' if ok else 'FAIL'}] criterion-9: rerun artifacts byte-identical")
    assert ok
