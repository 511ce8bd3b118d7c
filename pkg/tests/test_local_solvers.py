import numpy as np
import pytest

from wsym.discretization import Discretization
from wsym.local_solvers import (
    ValidityError,
    build_local_blocks,
    factorize_local,
    local_resolvent,
    saddle_matrix,
)
from wsym.material import MaterialParams
from wsym.mesh import generate_structured_alfeld


@pytest.fixture(scope="module")
def cache():
    disc = Discretization(generate_structured_alfeld(2), 1)
    return factorize_local(disc, MaterialParams(1.3, 4.0, 2.5))


def test_saddle_matrix_symmetric(cache):
    K = saddle_matrix(cache.blocks)
    assert np.abs(K - K.transpose(0, 2, 1)).max() <= 1e-15 * np.abs(K).max()
    A = cache.blocks.A
    assert np.all(np.linalg.eigvalsh(A) > 0)


def test_identity_stress_is_orthogonal_to_skew(cache):
    disc = cache.disc
    c = np.zeros((disc.mesh.n_elements, 4, disc.n1))
    c[:, [0, 3], 0] = 1.0 / np.sqrt(2.0)  # constant basis function is sqrt(2)
    c = c.reshape(disc.mesh.n_elements, disc.nS)
    assert np.allclose(disc.eval_stress(c), np.eye(2))
    assert np.abs(np.einsum("ers,es->er", cache.blocks.C, c)).max() < 1e-14


def test_local_residuals(cache):
    assert cache.residual <= 1e-12
    assert np.all(cache.min_pivot > 1e-13)


def test_q2l_energy_identity(cache):
    """M_U Q2^L = rho^{-1} (A Q1^L)^T Q1^L."""
    rho = cache.blocks.rho[:, None, None]
    lhs = cache.blocks.mass_u @ cache.Q2L
    rhs = np.einsum("esu,est,etv->euv", cache.Q1L, cache.blocks.A, cache.Q1L) / rho
    assert np.abs(lhs - rhs).max() <= 1e-12 * np.abs(lhs).max()


def test_q2l_h2_scaling():
    ratios = []
    for n in (1, 2, 4, 8):
        disc = Discretization(generate_structured_alfeld(n), 1)
        c = factorize_local(disc, MaterialParams())
        ratios.append(np.max(c.q2l_norms() / disc.geom.diameter**2))
    assert max(ratios) / min(ratios) <= 1.0 + 1e-8


def test_q2l_bounded_as_lambda_grows():
    disc = Discretization(generate_structured_alfeld(1), 1)
    q = [factorize_local(disc, MaterialParams(1.0, lam)).q2l_norms().max() for lam in (1.0, 1e3, 1e6)]
    assert q[1] <= q[0] and q[2] <= q[0]
    assert abs(q[1] - q[2]) <= 1e-2 * q[2]


def test_resolvent_at_zero_is_identity(cache):
    r = local_resolvent(cache, 0.0)
    assert np.array_equal(r.R, np.broadcast_to(np.eye(cache.Q2L.shape[1]), r.R.shape))
    assert r.min_sigma == 1.0


def test_resolvent_neumann_series(cache):
    Q = cache.Q2L
    I = np.eye(Q.shape[1])

    def remainder(lam):
        R = local_resolvent(cache, lam).R
        return np.abs(R - (I + lam * Q + lam**2 * Q @ Q)).max()

    assert np.abs(local_resolvent(cache, 1e-3).R - I).max() <= 2e-3 * np.abs(Q).max()
    # the truncation error of the two-term series is third order in lambda
    assert remainder(10.0) / remainder(5.0) == pytest.approx(8.0, rel=0.05)
    R = local_resolvent(cache, 10.0).R
    assert np.allclose(R - (I + 10 * Q + 100 * Q @ Q), 1000 * Q @ Q @ Q @ R, rtol=1e-6, atol=1e-15)


def test_resolvent_validity_error(cache):
    ev = np.linalg.eigvals(cache.Q2L[0])
    lam = 1.0 / np.max(ev.real)
    with pytest.raises(ValidityError, match="element 0"):
        local_resolvent(cache, lam)


def test_blocks_scale_with_material():
    disc = Discretization(generate_structured_alfeld(1), 1)
    b1 = build_local_blocks(disc, MaterialParams(1.0, 1.0))
    b2 = build_local_blocks(disc, MaterialParams(2.0, 2.0))
    assert np.allclose(b2.A, b1.A / 2)
    assert np.array_equal(b1.B, b2.B)


def test_per_element_materials_match_global():
    disc = Discretization(generate_structured_alfeld(1), 1)
    p = MaterialParams(1.5, 3.0, 2.0)
    a = factorize_local(disc, p)
    b = factorize_local(disc, [p] * disc.mesh.n_elements)
    assert np.array_equal(a.Q1, b.Q1)
    with pytest.raises(ValueError):
        factorize_local(disc, [p])


def test_thread_count_does_not_change_bits():
    disc = Discretization(generate_structured_alfeld(6), 1)
    a = factorize_local(disc, MaterialParams(), threads=1)
    b = factorize_local(disc, MaterialParams(), threads=4)
    for name in ("Q1", "Q2", "Q3", "Q1L", "Q2L", "Q3L"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
