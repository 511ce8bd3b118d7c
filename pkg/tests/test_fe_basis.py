from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsym import fe_basis as fb
from wsym.analysis import bdm_dof_matrix
from wsym.discretization import Discretization
from wsym.mesh import generate_structured_alfeld


def test_space_dimensions_k1():
    d = fb.space_dims(1)
    assert d["stress"] == 24
    assert d["displacement"] == 6
    assert d["rotation"] == 6
    assert d["multiplier_per_face"] == 6
    assert d["nedelec_moment"] == 3
    assert d["post"] == 20
    assert fb.build_basis("post_complement", 1).dim == 14
    assert fb.build_basis("nedelec_moment", 1).dim == 3


@pytest.mark.parametrize("k", [1, 2])
def test_basis_dims_match_table(k):
    d = fb.space_dims(k)
    assert fb.build_basis("stress", k).dim == d["stress"]
    assert fb.build_basis("displacement", k).dim == d["displacement"]
    assert fb.build_basis("rotation", k).dim == d["rotation"]
    assert fb.build_basis("multiplier", k).dim == d["multiplier_per_face"]
    assert fb.build_basis("nedelec_moment", k).dim == d["nedelec_moment"]


def test_unsupported_degree_raises():
    with pytest.raises(ValueError, match="k must be 1 or 2"):
        fb.build_basis("stress", 3)


def test_quadrature_examples():
    r = fb.triangle_rule(4)
    x, y = r.points.T
    assert r.weights.sum() == pytest.approx(0.5, abs=1e-15)
    assert (r.weights * x).sum() == pytest.approx(1 / 6, abs=1e-15)
    assert (r.weights * x * y).sum() == pytest.approx(1 / 24, abs=1e-15)
    e = fb.edge_rule(3)
    assert (e.weights * e.points**3).sum() == pytest.approx(0.25, abs=1e-15)
    assert np.all(r.weights > 0)


def test_quadrature_degree_range():
    with pytest.raises(ValueError):
        fb.triangle_rule(21)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 20), st.data())
def test_triangle_rule_exact_on_monomials(degree, data):
    a = data.draw(st.integers(0, degree))
    b = data.draw(st.integers(0, degree - a))
    r = fb.triangle_rule(degree)
    got = np.sum(r.weights * r.points[:, 0] ** a * r.points[:, 1] ** b)
    exact = fb.monomial_integral(a, b)
    assert abs(got - float(exact)) <= 1e-14 * max(1.0, float(exact)) + 1e-16


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_random_polynomial_integral(d, seed):
    rng = np.random.default_rng(seed)
    exps = fb.monomial_exponents(d)
    c = rng.integers(-5, 6, size=len(exps))
    exact = sum(Fraction(int(ci)) * fb.monomial_integral(int(a), int(b)) for ci, (a, b) in zip(c, exps))
    r = fb.triangle_rule(d)
    vals = fb.eval_monomials(d, r.points) @ c
    assert np.dot(r.weights, vals) == pytest.approx(float(exact), abs=1e-13)


def test_monomial_integral_oracle():
    assert fb.monomial_integral(0, 0) == Fraction(1, 2)
    assert fb.monomial_integral(1, 1) == Fraction(1, 24)
    assert fb.monomial_integral(2, 0) == Fraction(1, 12)


@pytest.mark.parametrize("d", [0, 1, 2, 3, 4])
def test_scalar_basis_orthonormal(d):
    r = fb.triangle_rule(2 * d)
    v = fb.scalar_values(d, r.points)
    assert np.allclose(np.einsum("q,qa,qb->ab", r.weights, v, v), np.eye(fb.dim_p(d)), atol=1e-13)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_scalar_grads_match_finite_differences(d):
    pts = np.array([[0.2, 0.3], [0.5, 0.1]])
    g = fb.scalar_grads(d, pts)
    eps = 1e-6
    for j in range(2):
        step = np.zeros(2)
        step[j] = eps
        fd = (fb.scalar_values(d, pts + step) - fb.scalar_values(d, pts - step)) / (2 * eps)
        assert np.allclose(g[..., j], fd, atol=1e-7)


@pytest.mark.parametrize("k", [1, 2])
@pytest.mark.parametrize("space", ["stress", "displacement", "rotation", "multiplier", "nedelec_moment"])
def test_local_bases_orthonormal(space, k):
    assert np.allclose(fb.build_basis(space, k).gram(), np.eye(fb.build_basis(space, k).dim), atol=1e-12)


@pytest.mark.parametrize("k", [1, 2])
def test_post_complement_orthogonal_to_pk(k):
    r = fb.triangle_rule(2 * (k + 2))
    comp = fb.build_basis("post_complement", k)(r.points)  # (nq, n, 2)
    low = fb.build_basis("displacement", k)(r.points)
    assert np.allclose(np.einsum("q,qic,qjc->ij", r.weights, comp, low), 0.0, atol=1e-13)


@pytest.mark.parametrize("k", [1, 2])
def test_nedelec_moment_space(k):
    """Span is P^{k-1} plus homogeneous degree-k fields w with w . x = 0."""
    b = fb.build_basis("nedelec_moment", k)
    pts = np.random.default_rng(1).random((20, 2))
    v = b(pts)  # (n, dim, 2)
    # the top-degree part of each function is tangential to the position vector
    top = np.array([[i for i, (a, c) in enumerate(fb.monomial_exponents(k)) if a + c == k]])
    hom = np.zeros_like(b.coeffs)
    hom[..., top[0]] = b.coeffs[..., top[0]]
    w = np.einsum("icm,nm->nic", hom, fb.eval_monomials(k, pts))
    assert np.allclose(np.einsum("nic,nc->ni", w, pts), 0.0, atol=1e-12)
    assert np.linalg.matrix_rank(v.transpose(1, 0, 2).reshape(b.dim, -1)) == b.dim


def test_legendre_values_orthonormal():
    r = fb.edge_rule(10)
    v = fb.legendre_values(4, r.points)
    assert np.allclose(np.einsum("g,ga,gb->ab", r.weights, v, v), np.eye(5), atol=1e-13)


@pytest.mark.parametrize("k", [1, 2])
def test_bdm_degrees_of_freedom_unisolvent(k):
    disc = Discretization(generate_structured_alfeld(2), k)
    M = bdm_dof_matrix(disc)
    assert M.shape[1] == M.shape[2] == 2 * disc.n1
    assert np.linalg.cond(M).max() < 1e8
