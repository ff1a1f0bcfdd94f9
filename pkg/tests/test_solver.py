import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pamlab.field import DomainError, ExplicitField, FieldSpec, HashField
from pamlab.solver import dense_oracle, fk_lower, fk_upper, solve_ode, solve_ode_converged, strategy_log_bound

SLACK = 1e-9


def _random_instance(rng):
    d = int(rng.integers(1, 3))
    fam = ["weibull", "pareto"][int(rng.integers(0, 2))]
    spec = FieldSpec(fam, d, alpha=4.0 if fam == "pareto" else None, gamma=0.5 if fam == "weibull" else None,
                     master_seed=int(rng.integers(0, 2**63)))
    R = int(rng.integers(1, 21 if d == 1 else 11))
    t = float(rng.uniform(0.1, 5.0))
    return HashField(spec), t, R


# ---------------------------------------------------------------- ODE solver


def test_zero_potential_conserves_mass():
    res = solve_ode(ExplicitField(1, {}), 1.0, 50)
    assert abs(res.L) < 1e-8
    assert not res.leak_flag


@pytest.mark.parametrize("c", [0.3, 2.0, 7.5])
def test_constant_potential(c):
    res = solve_ode(ExplicitField(1, {}, default=c), 1.0, 50)
    assert res.L == pytest.approx(c, abs=1e-8)


def test_five_site_box_matches_dense():
    f = ExplicitField(1, {(0,): 3.0})
    assert solve_ode(f, 1.0, 2).log_mass == pytest.approx(dense_oracle(f, 1.0, 2), abs=1e-8)


def test_box_radius_validation():
    with pytest.raises(DomainError):
        solve_ode(ExplicitField(1, {}), 1.0, 0)
    with pytest.raises(DomainError):
        dense_oracle(ExplicitField(2, {}), 1.0, 40)


@pytest.mark.parametrize("t", [0.5, 2.0, 5.0])
def test_extrapolation_error_model(t):
    f = HashField(FieldSpec("weibull", 1, gamma=0.5, master_seed=11))
    res = solve_ode(f, t, 15, tol=1e-10)
    exact = dense_oracle(f, t, 15)
    assert abs(res.log_mass - exact) <= 4 * max(res.error_estimate, 1e-10 * max(1.0, abs(exact)))


def test_box_doubling_converges_monotonically():
    f = HashField(FieldSpec("weibull", 1, gamma=0.5, master_seed=4))
    t = 5.0
    L = [solve_ode(f, t, R, tol=1e-12).log_mass for R in (8, 16, 32, 64)]
    diffs = np.abs(np.diff(L))
    assert np.all(np.diff(diffs) < 0) or diffs[-1] < 1e-12
    assert np.all(np.diff(L) >= -1e-10)  # Dirichlet mass grows with the box


def test_converged_solve_flags():
    f = HashField(FieldSpec("weibull", 1, gamma=0.5, master_seed=4))
    res = solve_ode_converged(f, 5.0, 16)
    assert not res.leak_flag


# ---------------------------------------------------------------- dense oracle


@pytest.mark.parametrize("c,t,d", [(2.0, 1.0, 1), (0.0, 3.0, 2), (5.5, 0.7, 3)])
def test_single_site_dense(c, t, d):
    # radius-0 ball is the origin alone
    f = ExplicitField(d, {(0,) * d: c})
    assert dense_oracle(f, t, 0) == pytest.approx(t * (c - 2 * d), rel=1e-13, abs=1e-13)


def test_dense_at_time_zero():
    assert dense_oracle(HashField(FieldSpec("pareto", 1, alpha=3.0)), 0.0, 5) == 0.0


def test_three_site_box_walk_survival():
    f = ExplicitField(1, {})
    U = math.exp(dense_oracle(f, 1.0, 1))
    rng = np.random.default_rng(20261018)
    n = 10**6
    jumps = rng.poisson(2.0, n)
    width = int(jumps.max())
    steps = rng.choice(np.array([-1, 1], dtype=np.int8), size=(n, width))
    steps[np.arange(width)[None, :] >= jumps[:, None]] = 0
    pos = np.cumsum(steps, axis=1, dtype=np.int16)
    p = np.all(np.abs(pos) <= 1, axis=1).mean()
    sigma = math.sqrt(p * (1 - p) / n)
    assert abs(U - p) <= 3 * sigma


# ---------------------------------------------------------------- Feynman-Kac bounds


@pytest.mark.parametrize("c", [0.0, 1.0, 4.2])
def test_single_site_bounds(c):
    f = ExplicitField(1, {(0,): c})
    t = 3.0
    lo = fk_lower(f, t, box_radius=0)
    hi = fk_upper(f, t, box_radius=0)
    assert lo.lower_log / t == pytest.approx(c - 2.0, abs=1e-14)
    assert hi.upper_log / t == pytest.approx(c, abs=1e-13)


@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_far_peak_does_not_underflow(backend):
    # the walk reaches the peak with amplitude far below the double range
    # relative to the origin, yet the peak dominates the final mass
    f = ExplicitField(1, {(250,): 80.0})
    t, R = 20.0, 300
    res = solve_ode(f, t, R, tol=1e-12, backend=backend)
    assert fk_lower(f, t, box_radius=R).lower_log <= res.log_mass <= fk_upper(f, t, box_radius=R).upper_log
    assert res.log_mass > 0.25 * t * 80.0  # without the peak log U <= 0


def test_strategy_bound_origin_limit():
    val, rho = strategy_log_bound(np.array([2.0]), np.array([0]), 3.0, 1)
    assert val[0] == 3.0 * 2.0 - 2.0 * 3.0 and rho[0] == 0.0


def test_oracle_inequalities_on_random_boxes():
    rng = np.random.default_rng(5)
    for _ in range(20):
        f, t, R = _random_instance(rng)
        exact = dense_oracle(f, t, R)
        lo = fk_lower(f, t, box_radius=R).lower_log
        hi = fk_upper(f, t, box_radius=R).upper_log
        assert lo <= exact + SLACK
        assert exact <= hi + SLACK


def test_exact_sandwich_fifty_instances():
    rng = np.random.default_rng(77)
    for _ in range(50):
        f, t, R = _random_instance(rng)
        exact = dense_oracle(f, t, R)
        assert fk_lower(f, t, box_radius=R).lower_log <= exact + SLACK
        assert exact <= fk_upper(f, t, box_radius=R).upper_log + SLACK
        assert solve_ode(f, t, R, tol=1e-12).log_mass == pytest.approx(exact, abs=1e-8)


@settings(max_examples=30)
@given(st.integers(0, 2**63), st.integers(1, 12), st.floats(0.05, 5.0))
def test_lower_grows_with_scan_radius(seed, R, t):
    f = HashField(FieldSpec("weibull", 1, gamma=0.5, master_seed=seed))
    assert fk_lower(f, t, box_radius=R + 1).lower_log >= fk_lower(f, t, box_radius=R).lower_log


@settings(max_examples=30)
@given(st.integers(0, 2**63), st.sampled_from(["pareto", "weibull"]), st.floats(0.2, 8.0))
def test_infinite_lattice_sandwich(seed, fam, t):
    spec = FieldSpec(fam, 1, alpha=4.0 if fam == "pareto" else None, gamma=0.5 if fam == "weibull" else None,
                     master_seed=seed)
    f = HashField(spec)
    lo = fk_lower(f, t)
    hi = fk_upper(f, t)
    assert lo.lower_log <= hi.upper_log
    assert hi.jump_rate == 2 * t and hi.epsilon == 1e-6
    R = max(16, math.ceil(4 * t) + 10)
    ode = solve_ode_converged(f, t, R)
    assert lo.lower_log <= ode.log_mass + SLACK
    assert ode.log_mass <= hi.upper_log + SLACK
