import itertools

import numpy as np
import pytest

from cronlab.errors import ParameterError, PreconditionError, StructuralError
from cronlab.grid import (GridSpec, ScalarField, constant_field, lebesgue_norm, mode_field,
                          plane_wave, relative_l2_difference, sobolev_norm, to_physical)
from cronlab.lp import (BandRange, DEFAULT_BUMP, SpacetimeField, bernstein_ratio,
                        besov_norm, commutator_field, commutator_ratio, fit_loglog,
                        product_ratio, project_band, project_leq, project_range,
                        restrict_annulus, spacetime_norm, spacetime_product_ratio,
                        time_derivative)
from cronlab.random_fields import (flat_spectrum_field, packet_field, random_band_field,
                                   random_field, stream)


# ---------------------------------------------------------------------------
# bump profile

def test_bump_profile_shape():
    b = DEFAULT_BUMP
    assert b(0.3) == 1.0 and b(1.0) == 1.0
    assert b(2.0) == 0.0 and b(2.7) == 0.0
    rs = np.linspace(0.0, 3.0, 601)
    vals = b(rs)
    assert vals.min() >= 0.0 and vals.max() <= 1.0
    assert np.all(np.diff(vals) <= 1e-12)


def test_bump_monotone_on_lattice_radii():
    g = GridSpec(2, 64, 1.0)
    radii = np.unique(g.xi_norm.ravel())
    vals = DEFAULT_BUMP(radii)
    assert np.all(np.diff(vals) <= 1e-12)


# ---------------------------------------------------------------------------
# band range and projections

def test_band_range_constraints():
    g = GridSpec(2, 64, 1.0)
    BandRange(0, 3).validate(g)
    with pytest.raises(ParameterError):
        BandRange(0, 5).validate(g)       # 2^6 = 64 >= N/(2L) = 32
    with pytest.raises(ParameterError):
        BandRange(-1, 3).validate(g)      # 2^-1 < one lattice shell
    with pytest.raises(ParameterError):
        BandRange(3, 1)


def test_band_symbol_is_one_on_its_sphere():
    g = GridSpec(2, 64, 1.0)
    k = 3
    pw = plane_wave(g, (2 ** k, 0))
    assert relative_l2_difference(project_band(pw, k), pw) < 1e-13


def test_band_symbol_value_off_sphere():
    # at |xi| = 1.5 * 2^k the spec's symbol m(2^-k xi) - m(2^-k+1 xi) equals m(1.5)
    g = GridSpec(2, 64, 1.0)
    pw = plane_wave(g, (12, 0))  # 1.5 * 2^3
    out = project_band(pw, 3)
    got = np.abs(out.freq_values).max() / np.abs(pw.freq_values).max()
    assert abs(got - DEFAULT_BUMP(1.5)) < 1e-13


def test_disjoint_bands_annihilate():
    g = GridSpec(2, 64, 1.0)
    f = random_field(g, stream(10, 0))
    for k, k2 in ((0, 2), (1, 3), (0, 3)):
        out = project_band(project_band(f, k2), k)
        assert lebesgue_norm(out, 2) == 0.0


def test_partition_of_unity_on_annulus():
    g = GridSpec(2, 64, 1.0)
    br = BandRange.widest(g)
    f = restrict_annulus(random_field(g, stream(10, 1)), *br.annulus())
    total = project_band(f, br.k_min)
    for k in range(br.k_min + 1, br.k_max + 1):
        total = total + project_band(f, k)
    assert relative_l2_difference(total, f) < 1e-12
    ranged = project_range(f, br.k_min, br.k_max)
    assert relative_l2_difference(ranged, f) < 1e-12


def test_out_of_range_band_errors():
    g = GridSpec(2, 64, 1.0)
    f = random_field(g, stream(10, 2))
    with pytest.raises(ParameterError):
        project_band(f, 9)
    with pytest.raises(ParameterError):
        project_leq(f, -5)


def test_projections_commute_with_multipliers():
    from cronlab.grid import apply_multiplier
    g = GridSpec(2, 64, 1.0)
    f = random_field(g, stream(10, 3))
    m = lambda xi: np.exp(1j * xi[0])
    a = project_band(apply_multiplier(f, m), 2)
    b = apply_multiplier(project_band(f, 2), m)
    assert relative_l2_difference(a, b) < 1e-13


# ---------------------------------------------------------------------------
# product trichotomy (single-mode exhaustive scan)

def test_product_trichotomy():
    g = GridSpec(2, 64, 1.0)
    br = BandRange.widest(g)
    ks = list(br)
    sep = 2  # the O(1) constant fixed by the bump's support arithmetic
    for k, k1, k2 in itertools.product(ks, ks, ks):
        high_low = (abs(k1 - k) <= sep and k2 <= k + sep)
        low_high = (k1 <= k + sep and abs(k2 - k) <= sep)
        high_high = (k1 >= k - sep and abs(k2 - k1) <= sep)
        if high_low or low_high or high_high:
            continue
        f = to_physical(mode_field(g, (2 ** k1, 0)))
        h = to_physical(mode_field(g, (0, 2 ** k2)))
        prod = ScalarField(g, f.phys_values * h.phys_values)
        out = project_band(prod, k)
        assert lebesgue_norm(out, 2) < 1e-12 * lebesgue_norm(prod, 2), (k, k1, k2)


# ---------------------------------------------------------------------------
# Besov norms

def test_besov_single_shell():
    g = GridSpec(2, 64, 1.0)
    br = BandRange.widest(g)
    k = 2
    f = restrict_annulus(random_field(g, stream(11, 0)), 2.0 ** k, 2.0 ** k * 1.999)
    f = project_band(f, k)  # inside one band footprint
    # rebuild as exactly-one-band content
    for q in (4, 8):
        expect = 0.0
        for kk in br:
            w = 2.0 ** ((g.n / 2 - g.n / q) * kk)
            expect += (w * lebesgue_norm(project_band(f, kk), 2)) ** 2
        got = besov_norm(f, 2, q, 2, br)
        assert abs(got - np.sqrt(expect)) < 1e-10 * got


def test_besov_matches_sobolev_up_to_constant():
    g = GridSpec(2, 64, 1.0)
    br = BandRange.widest(g)
    q = 4
    s = g.n / 2 - g.n / q
    ratios = []
    for i in range(10):
        f = flat_spectrum_field(g, stream(11, 10 + i), br)
        ratios.append(sobolev_norm(f, s) / besov_norm(f, 2, q, 2, br))
    assert 0.25 <= min(ratios) and max(ratios) <= 4.0


def test_besov_l2_below_l1_on_random_fields():
    g = GridSpec(2, 32, 1.0)
    br = BandRange.widest(g)
    for i in range(100):
        f = random_field(g, stream(12, i), 2.0 ** br.k_min, 2.0 ** br.k_max)
        assert besov_norm(f, 2, 4, 2, br) <= besov_norm(f, 2, 4, 1, br) * (1 + 1e-12)


def test_besov_rejects_p_above_q():
    g = GridSpec(2, 32, 1.0)
    f = random_field(g, stream(12, 0), 1.0, 8.0)
    with pytest.raises(ParameterError):
        besov_norm(f, 4, 2, 2)
    besov_norm(f, 4, 2, 2, allow_decreasing=True)


# ---------------------------------------------------------------------------
# spacetime norms

def test_spacetime_constant_slices():
    g = GridSpec(2, 16, 2.0)
    f = random_field(g, stream(13, 0))
    ts = np.linspace(0.0, 3.0, 7)
    F = SpacetimeField(ts, tuple(f for _ in ts))
    for q in (1, 2):
        expect = 3.0 ** (1.0 / q) * lebesgue_norm(f, 2)
        assert abs(spacetime_norm(F, q, lambda s: lebesgue_norm(s, 2)) - expect) < 1e-12


def test_spacetime_sup_of_monotone_growth():
    g = GridSpec(2, 16, 2.0)
    f = random_field(g, stream(13, 1))
    ts = np.linspace(0.0, 1.0, 5)
    F = SpacetimeField(ts, tuple(f * (1.0 + t) for t in ts))
    expect = 2.0 * lebesgue_norm(f, 2)
    assert abs(spacetime_norm(F, np.inf, lambda s: lebesgue_norm(s, 2)) - expect) < 1e-12


def test_spacetime_sin_modulation_closed_form():
    g = GridSpec(2, 16, 2.0)
    f = random_field(g, stream(13, 2))
    ts = np.linspace(0.0, np.pi, 41)
    F = SpacetimeField(ts, tuple(f * np.sin(t) for t in ts))
    got = spacetime_norm(F, 2, lambda s: lebesgue_norm(s, 2))
    expect = lebesgue_norm(f, 2) * np.sqrt(np.pi / 2.0)
    assert abs(got - expect) < 1e-3 * expect  # trapezoid at 41 nodes


def test_spacetime_needs_two_samples():
    g = GridSpec(2, 16, 2.0)
    f = random_field(g, stream(13, 3))
    F = SpacetimeField(np.array([0.0]), (f,))
    with pytest.raises(StructuralError):
        spacetime_norm(F, 2, lambda s: lebesgue_norm(s, 2))
    with pytest.raises(StructuralError):
        SpacetimeField(np.array([]), ())


def test_time_derivative_orders():
    g = GridSpec(2, 16, 2.0)
    f = random_field(g, stream(13, 4))
    ts3 = np.linspace(0.0, 1.0, 3)
    _, order3 = time_derivative(SpacetimeField(ts3, tuple(f * np.exp(t) for t in ts3)))
    assert order3 == 2
    ts5 = np.linspace(0.0, 1.0, 6)
    _, order5 = time_derivative(SpacetimeField(ts5, tuple(f * np.exp(t) for t in ts5)))
    assert order5 == 4


# ---------------------------------------------------------------------------
# Bernstein

def test_bernstein_single_mode_and_identity_case():
    g = GridSpec(2, 64, 1.0)
    k = 3
    pw = project_band(plane_wave(g, (2 ** k, 0)), k)
    assert abs(bernstein_ratio(pw, k, 2, 2) - 1.0) < 1e-12  # p = q
    r = bernstein_ratio(pw, k, 2, np.inf)
    assert np.isfinite(r) and r > 0


def test_bernstein_support_precondition():
    g = GridSpec(2, 64, 1.0)
    f = random_field(g, stream(14, 0), 1.0, 16.0)
    with pytest.raises(PreconditionError):
        bernstein_ratio(f, 2, 2, 4)


def test_bernstein_scan_uniform_over_packets():
    g = GridSpec(2, 128, 1.0)
    ks = [2, 3, 4]
    means = []
    for k in ks:
        vals = [bernstein_ratio(packet_field(g, stream(14, 5 + 7 * k + s), k, packets=1),
                                k, 2, 4) for s in range(4)]
        means.append(np.mean(vals))
    assert max(means) / min(means) < 10.0


# ---------------------------------------------------------------------------
# commutator

def test_commutator_vanishes_for_constant_f():
    g = GridSpec(2, 64, 1.0)
    f = constant_field(g, 2.5)
    h = random_field(g, stream(15, 0), 2.0, 16.0)
    c = commutator_field(f, h, 3)
    assert lebesgue_norm(c, 2) < 1e-13 * lebesgue_norm(h, 2)


def test_commutator_slope_and_ratio():
    g = GridSpec(2, 256, 1.0)
    br = BandRange.widest(g)
    f = flat_spectrum_field(g, stream(15, 1), BandRange(br.k_min, br.k_min), real=True)
    h = flat_spectrum_field(g, stream(15, 2), BandRange(br.k_min, br.k_max))
    ks = list(range(br.k_min + 2, br.k_max))
    norms = [lebesgue_norm(commutator_field(f, h, k), 2) for k in ks]
    slope = fit_loglog([2.0 ** k for k in ks], norms)
    assert -1.15 <= slope <= -0.85
    for k in ks:
        assert commutator_ratio(f, h, k, np.inf, 2, 2) <= 10.0


def test_commutator_hoelder_validation():
    g = GridSpec(2, 32, 1.0)
    f = random_field(g, stream(15, 3), 1.0, 2.0, real=True)
    h = random_field(g, stream(15, 4), 1.0, 8.0)
    with pytest.raises(ParameterError):
        commutator_ratio(f, h, 2, 4, 4, 4)


# ---------------------------------------------------------------------------
# product estimates

def test_product_ratio_zero_g():
    g = GridSpec(2, 64, 1.0)
    br = BandRange.widest(g)
    f = random_field(g, stream(16, 0), *br.annulus())
    z = ScalarField(g, np.zeros(g.shape))
    assert product_ratio(f, z, 2, 2, 2, 4, 2, 4, br) == 0.0


def test_product_ratio_single_shell_high_high():
    g = GridSpec(2, 64, 1.0)
    br = BandRange.widest(g)
    k = br.k_max - 1
    f = random_band_field(g, stream(16, 1), k)
    h = random_band_field(g, stream(16, 2), k)
    r = product_ratio(f, h, 2, 2, 2, 4, 2, 4, br)
    assert np.isfinite(r) and r > 0


def test_product_ratio_ensemble_bound():
    g = GridSpec(3, 32, 1.0)
    br = BandRange.widest(g)
    worst = 0.0
    for i in range(10):
        f = flat_spectrum_field(g, stream(16, 10 + i), br)
        h = flat_spectrum_field(g, stream(16, 50 + i), br)
        worst = max(worst, product_ratio(f, h, 2, 2, 2, 4, 2, 4, br))
    assert worst <= 100.0


def test_product_exponent_validation_names_inequality():
    g = GridSpec(2, 32, 1.0)
    f = random_field(g, stream(16, 3), 1.0, 8.0)
    with pytest.raises(ParameterError) as err:
        product_ratio(f, f, 2, 2, 4, 2, 2, 4)   # p1 >= q1
    assert "p1" in str(err.value)


def test_spacetime_product_needs_n_above_3():
    g = GridSpec(3, 16, 1.0)
    ts = np.linspace(0.0, 1.0, 3)
    f = random_field(g, stream(16, 4), 1.0, 4.0)
    F = SpacetimeField(ts, tuple(f for _ in ts))
    with pytest.raises(ParameterError):
        spacetime_product_ratio(F, F, 2, 2)


def test_spacetime_product_finite_at_n4():
    g = GridSpec(4, 16, 4.0)
    br = BandRange.widest(g)
    ts = np.linspace(0.0, 1.0, 3)
    rng = stream(16, 5)
    F = SpacetimeField(ts, tuple(flat_spectrum_field(g, rng, br) for _ in ts))
    G = SpacetimeField(ts, tuple(flat_spectrum_field(g, rng, br) for _ in ts))
    r = spacetime_product_ratio(F, G, 2, 2, band_range=br)
    assert np.isfinite(r) and 0 < r <= 100.0
