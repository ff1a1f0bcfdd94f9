"""The numba kernels and the numpy fallback compute the same field and searches."""
import numpy as np
import pytest

from pamlab._backend import get_kernels
from pamlab.field import FieldSpec, HashField, ball_array
from pamlab.solver import solve_ode

SPECS = [FieldSpec("pareto", 1, alpha=4.0, master_seed=3), FieldSpec("weibull", 2, gamma=0.5, master_seed=4),
         FieldSpec("exponential", 3, master_seed=5)]


@pytest.mark.parametrize("spec", SPECS)
def test_site_values_agree(spec):
    z = ball_array(spec.d, 12 if spec.d > 1 else 2000)
    a = HashField(spec, backend="numba").values(z)
    b = HashField(spec, backend="numpy").values(z)
    assert np.allclose(a, b, rtol=1e-13, atol=0)


@pytest.mark.parametrize("spec", SPECS[:2])
@pytest.mark.parametrize("kind", ["xi", "psi", "psi_lower"])
def test_search_agrees(spec, kind):
    a = HashField(spec, backend="numba").search(kind, 50.0, 0, 3000, k=4)
    b = HashField(spec, backend="numpy").search(kind, 50.0, 0, 3000, k=4)
    assert np.array_equal(a.sites, b.sites)
    assert np.allclose(a.scores, b.scores, rtol=1e-13)


def test_strang_kernels_agree():
    f_nb = HashField(SPECS[0], backend="numba")
    ra = solve_ode(f_nb, 2.0, 20, backend="numba")
    rb = solve_ode(f_nb, 2.0, 20, backend="numpy")
    assert ra.log_mass == pytest.approx(rb.log_mass, rel=1e-12)


def test_unknown_backend():
    with pytest.raises(ValueError):
        get_kernels("fortran")
