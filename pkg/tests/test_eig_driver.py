import numpy as np
import pytest
import scipy.linalg as la

from wsym.eig_driver import operator_path, solve_eigen, solve_linear_condensed
from wsym.material import MaterialParams
from wsym.mesh import generate_structured_alfeld
from wsym.source_driver import setup


@pytest.fixture(scope="module")
def eig2():
    params = MaterialParams()
    st = setup(generate_structured_alfeld(2), params, 1)
    return st, solve_eigen(st.disc.mesh, params, 4, prepared=st)


def test_linear_guess_positive_and_normalized(setup2):
    lt, X = solve_linear_condensed(setup2.system, 5)
    assert np.all(lt > 0)
    assert np.all(np.diff(lt) >= 0)
    G = X.T @ (setup2.system.M0 @ X)
    assert np.allclose(G, np.eye(5), atol=1e-10)


def test_linear_guess_matches_dense_pencil(setup2):
    a = setup2.system.a.toarray()
    M0 = setup2.system.M0.toarray()
    # the finite eigenvalues of a x = lambda M0 x are the reciprocals of M0 x = nu a x
    nu = la.eigh(M0, a, eigvals_only=True)[::-1]
    lt, _ = solve_linear_condensed(setup2.system, 6)
    assert np.allclose(lt, 1.0 / nu[:6], rtol=1e-10)


def test_too_many_eigenvalues_rejected(setup2):
    with pytest.raises(ValueError):
        solve_linear_condensed(setup2.system, setup2.system.n_dofs)


def test_fixed_point_of_nonlinear_pencil(eig2):
    st, res = eig2
    for j, r in enumerate(res):
        B = st.system.mass_lambda(r.lambda_h).toarray()
        # B(lambda) is singular, so solve the reciprocal pencil B x = nu a x
        nu = la.eigh(B, st.system.a.toarray(), eigvals_only=True)[::-1]
        assert 1.0 / nu[j] == pytest.approx(r.lambda_h, rel=1e-9)
        assert r.residual <= 1e-10
        assert r.iterations <= 5


def test_eigenvalues_sorted_and_below_guess(eig2):
    _, res = eig2
    lam = [r.lambda_h for r in res]
    assert lam == sorted(lam)
    # B(lambda) grows with lambda, so the nonlinear eigenvalue sits below the linear guess
    assert all(r.lambda_tilde > r.lambda_h > 0 for r in res)


def test_recovered_eigenfunction_residuals(eig2):
    _, res = eig2
    for r in res:
        assert max(r.solution.residuals.values()) <= 1e-9
        assert r.solution.lam == pytest.approx(r.lambda_h)


@pytest.mark.parametrize("n", [1, 2])
def test_operator_path_agreement(n):
    params = MaterialParams()
    mesh = generate_structured_alfeld(n)
    st = setup(mesh, params, 1)
    op = operator_path(mesh, params, prepared=st)
    res = solve_eigen(mesh, params, 3, prepared=st, recover=False)
    lam = np.array([r.lambda_h for r in res])
    assert np.allclose(lam, op.lambdas[:3], rtol=1e-8)
    assert len(op.mu) == mesh.n_elements * st.disc.nU
    assert np.all(op.mu > 0)
    assert op.asymmetry <= 1e-10


def test_density_scaling():
    mesh = generate_structured_alfeld(1)
    a = solve_eigen(mesh, MaterialParams(1.0, 2.0, 1.0), 3, recover=False)
    b = solve_eigen(mesh, MaterialParams(1.0, 2.0, 2.5), 3, recover=False)
    for x, y in zip(a, b):
        assert y.lambda_h * 2.5 == pytest.approx(x.lambda_h, rel=1e-10)
        assert y.lambda_tilde * 2.5 == pytest.approx(x.lambda_tilde, rel=1e-10)


def test_gap_decreases():
    params = MaterialParams()
    gaps = []
    for n in (1, 2, 4):
        r = solve_eigen(generate_structured_alfeld(n), params, 1, recover=False)[0]
        gaps.append(r.lambda_tilde - r.lambda_h)
    assert gaps[0] > gaps[1] > gaps[2] > 0


def test_operator_cap(setup2):
    with pytest.raises(ValueError, match="cap"):
        operator_path(setup2.disc.mesh, MaterialParams(), prepared=setup2, cap=10)
