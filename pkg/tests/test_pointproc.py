import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pamlab.field import ExplicitField, FieldSpec, HashField
from pamlab.limits import scales, theta
from pamlab.pointproc import (
    DivergenceError, IntensityModel, ModelKind, PatternKind, Region, band_edges, build_pattern, intensity_mass,
    poisson_gof, quadrature_oracle,
)
from pamlab.variational import psi

PARETO = FieldSpec("pareto", 1, alpha=4.0)
WEIBULL = FieldSpec("weibull", 1, gamma=0.5)


# ---------------------------------------------------------------- intensities


def test_intensity_examples():
    assert intensity_mass(IntensityModel("nu_pareto", 1, alpha=2.0), Region(2.0)) == pytest.approx(1.0, rel=1e-14)
    nl = IntensityModel("nu_lower_weibull", 1, gamma=0.5)
    assert nl.q == pytest.approx(2.0)
    assert intensity_mass(nl, Region(0.0)) == pytest.approx(2.0, rel=1e-14)


@pytest.mark.parametrize("d,gamma,tau", [(1, 0.5, 0.0), (2, 0.5, 1.3), (2, 0.75, -0.4)])
def test_nu_weibull_vs_lower_factor(d, gamma, tau):
    up = intensity_mass(IntensityModel("nu_weibull", d, gamma=gamma), Region(tau))
    lo = intensity_mass(IntensityModel("nu_lower_weibull", d, gamma=gamma), Region(tau))
    assert up / lo == pytest.approx((1 - gamma) ** (-d), rel=1e-12)
    assert lo == pytest.approx(theta("weibull", d, gamma) * math.exp(-gamma * tau), rel=1e-12)


def test_pareto_divergence():
    with pytest.raises(DivergenceError):
        intensity_mass(IntensityModel("nu_pareto", 1, alpha=4.0), Region(0.0))
    with pytest.raises(DivergenceError):
        intensity_mass(IntensityModel("mu_pareto", 1, alpha=4.0), Region(0.0, 0.0, 1.0))


@pytest.mark.parametrize("d,alpha,y", [(1, 2.0, 2.0), (1, 4.0, 0.5), (2, 4.0, 1.0), (2, 6.0, 3.0), (3, 5.0, 0.7)])
def test_quadrature_matches_closed_form(d, alpha, y):
    m = IntensityModel("nu_pareto", d, alpha=alpha)
    val, err = quadrature_oracle(m, Region(y))
    assert err <= 1e-8
    assert val == pytest.approx(theta("pareto", d, alpha) * y ** (d - alpha), rel=1e-6)
    assert intensity_mass(m, Region(y)) == pytest.approx(val, rel=1e-6)


@pytest.mark.parametrize("kind", list(ModelKind))
def test_zero_volume_region(kind):
    m = IntensityModel(kind, 2, alpha=4.0, gamma=0.5)
    for reg in (Region(1.0, 0.5, 0.5), Region(1.0, 0.0, 2.0, 1.0)):
        assert intensity_mass(m, reg) == 0.0
        assert quadrature_oracle(m, reg)[0] == 0.0


@pytest.mark.parametrize("kind", [ModelKind.NU_PARETO, ModelKind.NU_WEIBULL, ModelKind.NU_LOWER_WEIBULL])
@pytest.mark.parametrize("d", [1, 2])
def test_window_additivity(kind, d):
    m = IntensityModel(kind, d, alpha=d + 2.5, gamma=0.6)
    cuts = [0.0, 0.3, 1.0, 2.5, 7.0, math.inf]
    parts = [quadrature_oracle(m, Region(0.8, a, b))[0] for a, b in zip(cuts[:-1], cuts[1:])]
    full = quadrature_oracle(m, Region(0.8))[0]
    assert sum(parts) == pytest.approx(full, abs=1e-8)
    closed = [intensity_mass(m, Region(0.8, a, b)) for a, b in zip(cuts[:-1], cuts[1:])]
    assert np.allclose(closed, parts, rtol=1e-7, atol=1e-10)


def test_mark_capped_region():
    m = IntensityModel("nu_weibull", 1, gamma=0.5)
    v, _ = quadrature_oracle(m, Region(0.2, 0.1, 3.0, 4.0))
    assert intensity_mass(m, Region(0.2, 0.1, 3.0, 4.0)) == pytest.approx(v, rel=1e-7)


def test_band_edges_equal_mass():
    m = IntensityModel("nu_pareto", 1, alpha=4.0)
    e = band_edges(m, 0.5, 10)
    masses = [intensity_mass(m, Region(0.5, a, b)) for a, b in zip(e[:-1], e[1:])]
    assert np.allclose(masses, 1.6, rtol=1e-9)


@given(st.floats(-5.0, 5.0), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_nu_density_nonnegative(y, s, g):
    for kind in (ModelKind.NU_PARETO, ModelKind.NU_WEIBULL):
        assert IntensityModel(kind, 1, alpha=4.0, gamma=0.5).density(s, y) >= 0


# ---------------------------------------------------------------- patterns


def test_floor_above_max_gives_empty_pattern():
    f = HashField(PARETO.with_seed(3))
    assert len(build_pattern(f, 1e3, PatternKind.PSI, floor=1e9)) == 0


def test_hand_field_single_peak():
    spec = FieldSpec("pareto", 1, alpha=4.0)
    f = ExplicitField(1, {(5,): 50.0}, spec=spec)
    t = 10.0
    s = scales("pareto", 1, 4.0, t)
    pat = build_pattern(f, t, PatternKind.PSI, floor=5.0)
    assert len(pat) == 1
    assert pat.x[0, 0] == pytest.approx(5 / s.r_t, rel=1e-14)
    assert pat.y[0] == pytest.approx(psi(f, t, (5,)) / s.a_t, rel=1e-14)


@given(st.integers(0, 2**63), st.sampled_from(list(PatternKind)), st.floats(-1.0, 3.0))
def test_patterns_finite_and_above_floor(seed, kind, floor):
    spec = WEIBULL.with_seed(seed)
    t = 1e3 if kind is not PatternKind.RAW else 1e4
    pat = build_pattern(HashField(spec), t, kind, floor=floor)
    assert np.all(pat.y >= floor) and np.all(np.isfinite(pat.x))
    assert pat.miss_probability <= 1e-6


def test_pattern_csv(tmp_path):
    pat = build_pattern(HashField(PARETO.with_seed(1)), 1e4, PatternKind.RAW, floor=0.5)
    pat.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "x_1,y" and len(lines) == len(pat) + 1


MASS_CASES = [
    ("pareto_psi", PARETO, PatternKind.PSI, IntensityModel("nu_pareto", 1, alpha=4.0), 0.5),
    ("pareto_psi", PARETO, PatternKind.PSI, IntensityModel("nu_pareto", 1, alpha=4.0), 1.0),
    ("weibull_psi", WEIBULL, PatternKind.PSI, IntensityModel("nu_weibull", 1, gamma=0.5), 0.0),
    ("weibull_psi", WEIBULL, PatternKind.PSI, IntensityModel("nu_weibull", 1, gamma=0.5), 1.0),
    ("weibull_psi_lower", WEIBULL, PatternKind.PSI_LOWER, IntensityModel("nu_lower_weibull", 1, gamma=0.5), 0.0),
    ("weibull_psi_lower", WEIBULL, PatternKind.PSI_LOWER, IntensityModel("nu_lower_weibull", 1, gamma=0.5), 1.0),
    ("pareto_raw", PARETO, PatternKind.RAW, IntensityModel("mu_pareto", 1, alpha=4.0), 0.5),
    ("pareto_raw", PARETO, PatternKind.RAW, IntensityModel("mu_pareto", 1, alpha=4.0), 1.0),
    ("weibull_raw", WEIBULL, PatternKind.RAW, IntensityModel("mu_weibull", 1, gamma=0.5), 0.0),
    ("weibull_raw", WEIBULL, PatternKind.RAW, IntensityModel("mu_weibull", 1, gamma=0.5), 1.0),
]


@pytest.mark.parametrize("name,spec,kind,model,tau", MASS_CASES, ids=[f"{c[0]}-{c[4]}" for c in MASS_CASES])
def test_mass_law(name, spec, kind, model, tau):
    n = 200
    t = 1e5
    counts = np.array([len(build_pattern(HashField(spec.with_seed(s)), t, kind, floor=tau)) for s in range(n)])
    region = Region(tau, 0.0, 1.0) if kind is PatternKind.RAW else Region(tau)
    m = intensity_mass(model, region)
    assert abs(counts.mean() - m) <= 3 * math.sqrt(m / n)


THIN_CASES = [
    (PARETO, PatternKind.RAW, IntensityModel("mu_pareto", 1, alpha=4.0), 0.5, 1e5),
    (WEIBULL, PatternKind.RAW, IntensityModel("mu_weibull", 1, gamma=0.5), 0.0, 1e5),
    (WEIBULL, PatternKind.PSI_LOWER, IntensityModel("nu_lower_weibull", 1, gamma=0.5), 0.0, 1e5),
    (PARETO, PatternKind.PSI, IntensityModel("nu_pareto", 1, alpha=4.0), 0.5, 1e5),
]


@pytest.mark.parametrize("spec,kind,model,tau,t", THIN_CASES, ids=["pareto_raw", "weibull_raw", "weibull_psi_lower",
                                                                   "pareto_psi"])
def test_window_thinning_gof(spec, kind, model, tau, t):
    x_max = 1.0
    edges = band_edges(model, tau, 5, x_max)
    exp = np.array([intensity_mass(model, Region(tau, a, b)) for a, b in zip(edges[:-1], edges[1:])])
    counts = np.array([build_pattern(HashField(spec.with_seed(s)), t, kind, floor=tau).counts(edges)
                       for s in range(200)])
    assert poisson_gof(counts, exp).p > 0.01


# ---------------------------------------------------------------- goodness of fit


def test_gof_all_zero():
    assert poisson_gof(np.zeros(6), np.zeros(6)).p == 1.0


def test_gof_needs_five_regions():
    with pytest.raises(ValueError):
        poisson_gof([1, 2, 3], [1.0, 2.0, 3.0])


def test_gof_simulated_level():
    ok = 0
    for rep in range(100):
        rng = np.random.default_rng(1000 + rep)
        means = rng.uniform(1.0, 20.0, 100)
        ok += poisson_gof(rng.poisson(means), means).p > 0.01
    assert ok >= 97


def test_gof_dispersion_of_poisson_replicates():
    rng = np.random.default_rng(9)
    means = np.full(8, 3.0)
    res = poisson_gof(rng.poisson(means, size=(2000, 8)), means)
    assert 0.9 <= res.dispersion <= 1.1


def test_band_counts_uncorrelated():
    # one pair of disjoint |x| bands, so the 0.1 cut is a single comparison
    edges = np.array([0.0, 0.5, 1.0])
    counts = np.array([build_pattern(HashField(WEIBULL.with_seed(s)), 1e5, PatternKind.RAW, floor=0.0).counts(edges)
                       for s in range(500)])
    assert abs(np.corrcoef(counts.T)[0, 1]) < 0.1
