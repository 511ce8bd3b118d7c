"""Reference-element polynomial bases and quadrature.

Reference triangle: (0,0), (1,0), (0,1).  Monomials are ordered graded
lexicographically: degree 0, then (1,0), (0,1), then (2,0), (1,1), (0,2), ...

All scalar bases are slices of a single hierarchical L2-orthonormal basis
obtained by Gram-Schmidt on the monomials (done in exact rational
arithmetic), so the first ``dim P^d`` functions span ``P^d`` and the tail of a
``P^{d+2}`` basis spans its orthogonal complement to ``P^d``.

Component layouts used throughout the package:

* stress (2x2 matrix P^{k+1}): index ``c * n + a`` with ``c = 2*i + j``
* displacement (vector P^k): index ``m * n + a``
* rotation: scalar P^{k+1} coefficient ``a`` times J = [[0, 1], [-1, 0]]
* multiplier (vector P^{k+1} per edge): index ``m * (k+2) + q`` per face
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import factorial

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_jacobi

SUPPORTED_K = (1, 2)
SKEW = np.array([[0.0, 1.0], [-1.0, 0.0]])
SPACES = ("stress", "displacement", "rotation", "multiplier", "nedelec_moment", "post_complement")


def dim_p(d: int) -> int:
    return (d + 1) * (d + 2) // 2 if d >= 0 else 0


def monomial_exponents(d: int) -> np.ndarray:
    return np.array([(n - j, j) for n in range(d + 1) for j in range(n + 1)], dtype=np.int64)


def monomial_integral(a: int, b: int) -> Fraction:
    """Exact integral of x^a y^b over the reference triangle."""
    return Fraction(factorial(a) * factorial(b), factorial(a + b + 2))


# ---------------------------------------------------------------- quadrature


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, dim)
    weights: np.ndarray  # (nq,)
    degree: int


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Collapsed (Stroud conical) Gauss-Jacobi rule, exact to ``degree``."""
    if not 0 <= degree <= 20:
        raise ValueError(f"quadrature degree {degree} out of range [0, 20]")
    n = degree // 2 + 1
    xi, wxi = roots_jacobi(n, 1.0, 0.0)  # weight (1 - xi) on [-1, 1]
    eta, weta = legendre.leggauss(n)
    u = 0.5 * (1.0 + xi)
    wu = 0.25 * wxi
    v = 0.5 * (1.0 + eta)
    wv = 0.5 * weta
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    pts = np.column_stack([U.ravel(), ((1.0 - U) * V).ravel()])
    return QuadratureRule(points=pts, weights=W.ravel(), degree=degree)


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadratureRule:
    """Gauss-Legendre on [0, 1], exact to ``degree``."""
    if not 0 <= degree <= 20:
        raise ValueError(f"quadrature degree {degree} out of range [0, 20]")
    t, w = legendre.leggauss(degree // 2 + 1)
    return QuadratureRule(points=0.5 * (t + 1.0), weights=0.5 * w, degree=degree)


def build_quadrature(degree: int, shape: str = "triangle") -> QuadratureRule:
    if shape == "triangle":
        return triangle_rule(degree)
    if shape == "edge":
        return edge_rule(degree)
    raise ValueError(f"unknown quadrature shape {shape!r}")


def default_degree(k: int) -> int:
    return 2 * k + 8


# ------------------------------------------------------- orthonormal scalars


@lru_cache(maxsize=None)
def orthonormal_coefficients(d: int) -> np.ndarray:
    """Rows are coefficient vectors (over monomials up to degree d) of the
    hierarchical L2-orthonormal basis on the reference triangle."""
    exps = monomial_exponents(d)
    n = len(exps)
    G = [[monomial_integral(a1 + a2, b1 + b2) for (a2, b2) in exps] for (a1, b1) in exps]
    # Rational LDL^T, then phi = D^{-1/2} L^{-1} m
    L = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    D = [Fraction(0)] * n
    for j in range(n):
        D[j] = G[j][j] - sum(L[j][s] ** 2 * D[s] for s in range(j))
        for i in range(j + 1, n):
            L[i][j] = (G[i][j] - sum(L[i][s] * L[j][s] * D[s] for s in range(j))) / D[j]
    Linv = [[Fraction(0)] * n for _ in range(n)]
    for i in range(n):
        Linv[i][i] = Fraction(1)
        for j in range(i - 1, -1, -1):
            Linv[i][j] = -sum(L[i][s] * Linv[s][j] for s in range(j, i))
    C = np.array([[float(x) for x in row] for row in Linv])
    return C / np.sqrt(np.array([float(x) for x in D]))[:, None]


def eval_monomials(d: int, pts: np.ndarray) -> np.ndarray:
    exps = monomial_exponents(d)
    x, y = pts[..., 0, None], pts[..., 1, None]
    return x ** exps[:, 0] * y ** exps[:, 1]


def eval_monomial_grads(d: int, pts: np.ndarray) -> np.ndarray:
    """(..., n_monomials, 2)"""
    exps = monomial_exponents(d)
    a, b = exps[:, 0], exps[:, 1]
    x, y = pts[..., 0, None], pts[..., 1, None]
    dx = np.where(a > 0, a * x ** np.maximum(a - 1, 0) * y**b, 0.0)
    dy = np.where(b > 0, b * x**a * y ** np.maximum(b - 1, 0), 0.0)
    return np.stack([dx, dy], axis=-1)


def scalar_values(d: int, pts: np.ndarray) -> np.ndarray:
    """Orthonormal P^d basis at reference points: (..., dim P^d)."""
    return eval_monomials(d, pts) @ orthonormal_coefficients(d).T


def scalar_grads(d: int, pts: np.ndarray) -> np.ndarray:
    """Reference gradients: (..., dim P^d, 2)."""
    return np.einsum("...mc,nm->...nc", eval_monomial_grads(d, pts), orthonormal_coefficients(d))


def legendre_values(d: int, t: np.ndarray) -> np.ndarray:
    """Legendre polynomials orthonormal on [0, 1]: (..., d+1)."""
    s = 2.0 * np.asarray(t) - 1.0
    out = legendre.legvander(s, d)
    return out * np.sqrt(2.0 * np.arange(d + 1) + 1.0)


# ------------------------------------------------------------------- bases


@dataclass(frozen=True)
class ReferenceBasis:
    """Basis of a local space as coefficient tables over graded monomials.

    ``coeffs`` has shape (dim, ncomp, n_monomials): function ``i`` has
    component ``c`` equal to ``sum_m coeffs[i, c, m] * monomial_m``.  For the
    rotation space the single component is the scalar multiplying J; for the
    multiplier space monomials are powers of the edge parameter t in [0, 1].
    """

    space: str
    k: int
    degree: int
    ncomp: int
    coeffs: np.ndarray

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        """Values (..., dim, ncomp) at reference points."""
        if self.space == "multiplier":
            V = np.asarray(pts)[..., None] ** np.arange(self.degree + 1)
        else:
            V = eval_monomials(self.degree, np.asarray(pts))
        return np.einsum("icm,...m->...ic", self.coeffs, V)

    def gram(self, rule: QuadratureRule | None = None) -> np.ndarray:
        if self.space == "multiplier":
            rule = rule or edge_rule(2 * self.degree)
        else:
            rule = rule or triangle_rule(2 * self.degree)
        vals = self(rule.points)
        return np.einsum("q,qic,qjc->ij", rule.weights, vals, vals)


def _check_k(k: int) -> None:
    if k not in SUPPORTED_K:
        raise ValueError(f"k must be 1 or 2, got {k}")


def _tensor(scalar: np.ndarray, ncomp: int) -> np.ndarray:
    n, nm = scalar.shape
    out = np.zeros((ncomp * n, ncomp, nm))
    for c in range(ncomp):
        out[c * n : (c + 1) * n, c, :] = scalar
    return out


def _pad(coeffs: np.ndarray, d: int) -> np.ndarray:
    nm = dim_p(d)
    out = np.zeros(coeffs.shape[:-1] + (nm,))
    out[..., : coeffs.shape[-1]] = coeffs
    return out


def nedelec_row_coefficients(k: int) -> np.ndarray:
    """Vector P^{k-1} plus S^k = {homogeneous degree-k w with w . x = 0}.

    S^k is found as the null space of the linear map w -> w . x acting on
    homogeneous degree-k vector monomials, so nothing about its shape is
    assumed.  Returns (k(k+2), 2, dim P^k) over monomials in the reference
    coordinates.
    """
    exps = monomial_exponents(k)
    nm = len(exps)
    low = _pad(_tensor(np.eye(dim_p(k - 1)), 2), k)
    homog = [i for i, (a, b) in enumerate(exps) if a + b == k]
    cand = []
    for c in range(2):
        for i in homog:
            w = np.zeros((2, nm))
            w[c, i] = 1.0
            cand.append(w)
    # w . x lands in homogeneous degree k+1 monomials
    exps1 = {tuple(e): r for r, e in enumerate(monomial_exponents(k + 1))}
    M = np.zeros((len(exps1), len(cand)))
    for col, w in enumerate(cand):
        for c in range(2):
            for i in np.flatnonzero(w[c]):
                a, b = exps[i]
                M[exps1[(a + 1, b) if c == 0 else (a, b + 1)], col] += w[c, i]
    _, s, vt = np.linalg.svd(M)
    rank = int(np.sum(s > 1e-12))
    null = vt[rank:]
    skern = np.einsum("nc,cvm->nvm", null, np.array(cand))
    return np.concatenate([low, skern], axis=0)


@lru_cache(maxsize=None)
def build_basis(space: str, k: int) -> ReferenceBasis:
    _check_k(k)
    if space == "stress":
        d = k + 1
        return ReferenceBasis(space, k, d, 4, _tensor(orthonormal_coefficients(d), 4))
    if space == "displacement":
        d = k
        return ReferenceBasis(space, k, d, 2, _tensor(orthonormal_coefficients(d), 2))
    if space == "rotation":
        d = k + 1
        return ReferenceBasis(space, k, d, 1, orthonormal_coefficients(d)[:, None, :])
    if space == "multiplier":
        d = k + 1
        # monomial coefficients (in t) of the [0,1]-orthonormal Legendre basis
        C = np.zeros((d + 1, d + 1))
        for q in range(d + 1):
            c = np.zeros(d + 1)
            c[q] = np.sqrt(2 * q + 1)
            poly = np.polynomial.Polynomial(legendre.leg2poly(c))(np.polynomial.Polynomial([-1.0, 2.0]))
            C[q, : len(poly.coef)] = poly.coef
        return ReferenceBasis(space, k, d, 2, _tensor(C, 2))
    if space == "nedelec_moment":
        raw = ReferenceBasis(space, k, k, 2, nedelec_row_coefficients(k))
        L = np.linalg.cholesky(raw.gram())
        return ReferenceBasis(space, k, k, 2, np.einsum("ij,jcm->icm", np.linalg.inv(L), raw.coeffs))
    if space == "post_complement":
        return build_post_complement(k)
    raise ValueError(f"unknown space {space!r}")


@lru_cache(maxsize=None)
def build_post_complement(k: int) -> ReferenceBasis:
    """Vector basis of the L2 complement of P^k inside P^{k+2}."""
    _check_k(k)
    d = k + 2
    tail = orthonormal_coefficients(d)[dim_p(k) :]
    return ReferenceBasis("post_complement", k, d, 2, _tensor(tail, 2))


def space_dims(k: int) -> dict[str, int]:
    return {
        "stress": 4 * dim_p(k + 1),
        "displacement": 2 * dim_p(k),
        "rotation": dim_p(k + 1),
        "multiplier_per_face": 2 * (k + 2),
        "nedelec_moment": k * (k + 2),
        "post": 2 * dim_p(k + 2),
    }
