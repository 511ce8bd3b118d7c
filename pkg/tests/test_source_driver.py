import numpy as np
import pytest
import sympy as sp

from wsym.analysis import field_errors
from wsym.material import MaterialParams
from wsym.mesh import FaceTag, alfeld_split, build_mesh, generate_structured_alfeld
from wsym.source_driver import CASE_NAMES, SolverError, get_case, manufactured_catalog, setup, solve_source, solve_with_load


def _fd_divergence(fn, pt, h=1e-5):
    """Row-wise divergence of a tensor field by central differences."""
    out = np.zeros(2)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        out += (fn(pt + e)[:, j] - fn(pt - e)[:, j]) / (2 * h)
    return out


def test_smooth_load_at_center():
    # u = (s, s), s = sin(pi x) sin(pi y), mu = lambda = 1: f = (4 pi^2, 4 pi^2) at the center
    f = get_case("smooth").f(np.array([0.5, 0.5]))
    assert np.allclose(f, 4 * np.pi**2, rtol=1e-14)


@pytest.mark.parametrize("name", CASE_NAMES)
def test_load_is_minus_divergence_of_stress(name):
    params = MaterialParams(1.3, 2.7, 0.8)
    case = get_case(name, params)
    for pt in np.random.default_rng(0).random((5, 2)):
        div = _fd_divergence(case.sigma, pt)
        assert np.allclose(case.f(pt), -div / params.rho_s, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("name", CASE_NAMES)
def test_stress_and_rotation_consistent_with_displacement(name):
    params = MaterialParams(1.3, 2.7)
    case = get_case(name, params)
    pts = np.random.default_rng(1).random((7, 2))
    G = case.grad_u(pts)
    eps = 0.5 * (G + G.transpose(0, 2, 1))
    assert np.allclose(case.sigma(pts), params.stiffness_apply(eps))
    assert np.allclose(case.rotation_matrix(pts), 0.5 * (G - G.transpose(0, 2, 1)))


def test_divfree_case_symbolically_divergence_free():
    case = get_case("divfree")
    u = case.symbolic["u"]
    x, y = sp.symbols("x y", real=True)
    assert sp.simplify(sp.diff(u[0], x) + sp.diff(u[1], y)) == 0
    assert np.allclose(case.div_u(np.random.default_rng(2).random((9, 2))), 0.0)


def test_catalog_names():
    assert [c.name for c in manufactured_catalog()] == list(CASE_NAMES)
    with pytest.raises(ValueError, match="unknown manufactured case"):
        get_case("nope")


@pytest.mark.parametrize("k", [1, 2])
def test_polynomial_case_reproduced(k):
    params = MaterialParams()
    case = get_case("polynomial", params)
    st = setup(generate_structured_alfeld(2), params, k)
    sol = solve_with_load(st, st.disc.load_vector(case.f), params=params, dirichlet=case.u)
    err = field_errors(sol, case)
    assert err["err_sigma_l2"] <= 1e-12
    assert err["err_rho_l2"] <= 1e-12
    assert err["err_Pu_1h"] <= 1e-12


def test_errors_decrease_under_refinement():
    params = MaterialParams()
    case = get_case("smooth", params)
    errs = []
    for n in (2, 4):
        sol = solve_source(generate_structured_alfeld(n), params, case.f, k=1)
        errs.append(field_errors(sol, case))
    for key in errs[0]:
        assert errs[1][key] < errs[0][key] / 3


def test_empty_dirichlet_boundary_raises():
    base = build_mesh(
        np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
        np.array([[0, 1, 2], [0, 2, 3]]),
        lambda mid: FaceTag.TRACTION,
    )
    with pytest.raises(SolverError, match="Gamma_0 is empty"):
        setup(alfeld_split(base), MaterialParams())


def test_zero_load_without_callable(params):
    sol = solve_source(generate_structured_alfeld(1), params, None)
    assert not np.any(sol.sigma)
