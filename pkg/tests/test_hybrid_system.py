import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse.linalg as spla

from wsym.hybrid_system import assemble_full_kkt
from wsym.material import MaterialParams
from wsym.mesh import generate_structured_alfeld
from wsym.source_driver import get_case, setup, solve_with_load


def test_single_cell_sizes(params):
    st = setup(generate_structured_alfeld(1), params, 1)
    assert st.system.n_dofs == 42  # 7 interior faces, 2 components, 3 modes
    assert assemble_full_kkt(st.cache).n_unknowns == 6 * (24 + 6 + 6) + 42


def test_zero_load_gives_zero_solution(setup2, params):
    sol = solve_with_load(setup2, np.zeros((setup2.disc.mesh.n_elements, setup2.disc.nU)), params=params)
    for name in ("sigma", "u", "rho", "gamma"):
        assert not np.any(getattr(sol, name))


def test_condensed_stiffness_spd(setup2):
    a = setup2.system.a.toarray()
    assert np.array_equal(a, a.T)
    la.cholesky(a)
    M0 = setup2.system.M0.toarray()
    assert np.abs(M0 - M0.T).max() <= 1e-15 * np.abs(M0).max()
    # M0 is semidefinite with rank dim W^h, the source of the infinite eigenvalues
    ev = la.eigvalsh(M0)
    assert ev.min() >= -1e-13 * ev.max()
    assert np.sum(ev > 1e-12 * ev.max()) == setup2.disc.mesh.n_elements * setup2.disc.nU


def test_mass_lambda_at_zero_is_m0(setup2):
    B0 = setup2.system.mass_lambda(0.0)
    assert (B0 != setup2.system.M0).nnz == 0


@pytest.mark.parametrize("lam", [1.0, 30.0, 200.0])
def test_mass_lambda_symmetric(setup2, lam):
    B = setup2.system.mass_lambda(lam).toarray()
    assert np.abs(B - B.T).max() <= 1e-11 * np.abs(B).max()


def test_mass_lambda_derivative(setup2):
    lam, h = 40.0, 1e-4
    _, dB = setup2.system.mass_lambda(lam, derivative=True)
    fd = (setup2.system.mass_lambda(lam + h) - setup2.system.mass_lambda(lam - h)) / (2 * h)
    assert np.abs((dB - fd).toarray()).max() <= 1e-6 * np.abs(dB.toarray()).max()


def test_mass_lambda_small_lambda_close_to_m0(setup2):
    M0 = setup2.system.M0.toarray()
    B = setup2.system.mass_lambda(1e-3).toarray()
    assert 0 < np.abs(B - M0).max() <= 1e-3 * np.abs(M0).max()


@pytest.mark.parametrize("k", [1, 2])
@pytest.mark.parametrize("n", [1, 2])
def test_condensed_matches_full_kkt(k, n):
    params = MaterialParams(1.0, 3.0, 2.0)
    st = setup(generate_structured_alfeld(n, {"top"}), params, k)
    case = get_case("smooth", params)
    load = st.disc.load_vector(case.f)
    sol = solve_with_load(st, load, params=params)
    kkt = assemble_full_kkt(st.cache)
    x = spla.spsolve(kkt.matrix.tocsc(), kkt.rhs(st.cache, load))
    y = kkt.lift(sol)
    assert np.abs(x - y).max() <= 1e-10 * np.abs(x).max()


def test_kkt_cap(setup2):
    with pytest.raises(ValueError, match="cap"):
        assemble_full_kkt(setup2.cache, cap=10)


def test_recovered_fields_satisfy_constraints(params):
    st = setup(generate_structured_alfeld(3, {"right", "top"}), params, 1)
    case = get_case("smooth", params)
    sol = solve_with_load(st, st.disc.load_vector(case.f), params=params)
    assert sol.weak_symmetry_residual(st.cache.blocks) <= 1e-12
    assert sol.trace_residual(st.cache.blocks) <= 1e-12
    assert max(sol.residuals.values()) <= 1e-10


def test_large_lambda_recovery_consistent():
    params = MaterialParams(1.0, 1e8)
    st = setup(generate_structured_alfeld(4), params, 1)
    case = get_case("divfree", params)
    sol = solve_with_load(st, st.disc.load_vector(case.f), params=params)
    assert max(sol.residuals.values()) <= 1e-10
