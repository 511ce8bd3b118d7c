"""Element blocks A, B, C, D and the local solution maps Q and Q^L.

The local saddle system is kept in symmetric form

    [[A, B^T, C^T], [B, 0, 0], [C, 0, 0]] (sigma, u, rho) = rhs

which is the rho_S^{-1}-scaled second row multiplied through by rho_S.  The
multiplier-driven columns use rhs = (-D^T mu, 0, 0) and the load-driven
columns rhs = (0, -rho_S M_U f, 0) for f given by its W(K) coefficients.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .discretization import Discretization
from .fe_basis import SKEW
from .material import MaterialParams

PIVOT_TOL = 1e-13
RESOLVENT_TOL = 1e-10


class LocalSolveError(RuntimeError):
    pass


class ValidityError(LocalSolveError):
    """(I - lambda Q2^L) is (near) singular on some element."""


def thread_count(threads: int | None = None) -> int:
    env = os.environ.get("WSYM_THREADS")
    if env:
        return max(1, int(env))
    return max(1, threads or 1)


def map_chunks(fn, n: int, threads: int | None = None, chunk: int = 512) -> list:
    """Apply fn(slice) over [0, n) in chunks; results returned in chunk order."""
    slices = [slice(i, min(i + chunk, n)) for i in range(0, n, chunk)]
    nt = thread_count(threads)
    if nt == 1 or len(slices) == 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=nt) as pool:
        return list(pool.map(fn, slices))


def element_material(params: MaterialParams | Sequence[MaterialParams], ne: int):
    """Per-element compliance matrices (ne, 4, 4) and densities (ne,)."""
    if isinstance(params, MaterialParams):
        return np.broadcast_to(params.compliance_matrix(), (ne, 4, 4)), np.full(ne, params.rho_s)
    params = list(params)
    if len(params) != ne:
        raise ValueError(f"expected {ne} material records, got {len(params)}")
    return np.stack([p.compliance_matrix() for p in params]), np.array([p.rho_s for p in params])


@dataclass(frozen=True)
class LocalBlocks:
    A: np.ndarray  # (ne, nS, nS)
    B: np.ndarray  # (ne, nU, nS): B[u, s] = (u_basis, div s_basis)
    C: np.ndarray  # (ne, nR, nS): (s_basis, eta_basis)
    D: np.ndarray  # (ne, nMl, nS): <mu_basis, s_basis n>
    mass_u: np.ndarray  # (ne, nU, nU)
    rho: np.ndarray  # (ne,)


def build_local_blocks(disc: Discretization, params) -> LocalBlocks:
    ne = disc.mesh.n_elements
    g = disc.geom
    n1, n0 = disc.n1, disc.n0
    Acomp, rho = element_material(params, ne)

    A = np.einsum("e,ecd,ab->ecadb", g.det, Acomp, disc.mass1_ref).reshape(ne, disc.nS, disc.nS)

    # G[l, b, a] = int psi_b d(phi_a)/d(xhat_l) over the reference triangle
    G = np.einsum("q,qb,qal->lba", disc.rule.weights, disc.psi, disc.dphi_ref)
    Gp = np.einsum("e,ejl,lba->ejba", g.det, g.jac_inv_t, G)  # (ne, 2, n0, n1)
    B = np.zeros((ne, 2, n0, 2, 2, n1))
    for m in range(2):
        B[:, m, :, m, :, :] = Gp.transpose(0, 2, 1, 3)
    B = B.reshape(ne, disc.nU, disc.nS)

    C = np.einsum("e,c,ra->erca", g.det, SKEW.ravel(), disc.mass1_ref).reshape(ne, disc.nR, disc.nS)

    # D[(f, m, q), ((m, j), a)] = n_{f,j} sqrt(h_F) sum_g w_g P_q(t_g) phi_a(x_f(t_g))
    trace = disc.element_edge_values(disc.k + 1)  # (ne, 3, ng, n1)
    E = np.einsum("g,gq,efga->efqa", disc.erule.weights, disc.legendre_edge, trace)
    E *= np.sqrt(g.face_length)[:, :, None, None]
    D = np.zeros((ne, 3, 2, disc.nE, 2, 2, n1))
    for m in range(2):
        D[:, :, m, :, m, :, :] = np.einsum("efj,efqa->efqja", g.normals, E)
    D = D.reshape(ne, disc.nMl, disc.nS)
    return LocalBlocks(A=A, B=B, C=C, D=D, mass_u=disc.mass_u, rho=rho)


def saddle_matrix(blocks: LocalBlocks) -> np.ndarray:
    A, B, C = blocks.A, blocks.B, blocks.C
    ne, nS = A.shape[:2]
    nU, nR = B.shape[1], C.shape[1]
    n = nS + nU + nR
    K = np.zeros((ne, n, n))
    K[:, :nS, :nS] = A
    K[:, :nS, nS : nS + nU] = B.transpose(0, 2, 1)
    K[:, :nS, nS + nU :] = C.transpose(0, 2, 1)
    K[:, nS : nS + nU, :nS] = B
    K[:, nS + nU :, :nS] = C
    return K


@dataclass(frozen=True)
class LocalSolverCache:
    """Blocks plus the explicitly solved local maps, all batched over elements."""

    disc: Discretization
    blocks: LocalBlocks
    Q1: np.ndarray  # (ne, nS, nMl)
    Q2: np.ndarray  # (ne, nU, nMl)
    Q3: np.ndarray  # (ne, nR, nMl)
    Q1L: np.ndarray  # (ne, nS, nU)
    Q2L: np.ndarray  # (ne, nU, nU)
    Q3L: np.ndarray  # (ne, nR, nU)
    min_pivot: np.ndarray  # (ne,) relative smallest LU pivot
    residual: float  # max relative residual of all solved columns

    @property
    def n_elements(self) -> int:
        return self.Q1.shape[0]

    def q2l_norms(self) -> np.ndarray:
        """L2(K) operator norm of Q2^L per element.

        The displacement basis is L2-orthonormal up to the factor det J, which
        cancels in the ratio, so this is the spectral norm of the coefficient map.
        """
        return np.linalg.norm(self.Q2L, ord=2, axis=(1, 2))


def factorize_local(disc: Discretization, params, threads: int | None = None) -> LocalSolverCache:
    """Build blocks and solve every local system; raises on a singular element."""
    blocks = build_local_blocks(disc, params)
    K = saddle_matrix(blocks)
    ne, n, _ = K.shape
    nS, nU, nR, nMl = disc.nS, disc.nU, disc.nR, disc.nMl
    rhs = np.zeros((ne, n, nMl + nU))
    rhs[:, :nS, :nMl] = -blocks.D.transpose(0, 2, 1)
    rhs[:, nS : nS + nU, nMl:] = -blocks.rho[:, None, None] * blocks.mass_u

    def work(s: slice):
        Ks = K[s]
        _, _, U = scipy.linalg.lu(Ks)
        piv = np.abs(np.diagonal(U, axis1=-2, axis2=-1))
        rel = piv.min(axis=1) / piv.max(axis=1)
        X = np.linalg.solve(Ks, rhs[s])
        res = np.abs(Ks @ X - rhs[s]).max(axis=(1, 2))
        scale = (np.abs(Ks) @ np.abs(X)).max(axis=(1, 2)) + np.abs(rhs[s]).max(axis=(1, 2))
        return rel, X, res / scale

    parts = map_chunks(work, ne, threads)
    rel = np.concatenate([p[0] for p in parts])
    bad = np.flatnonzero(rel < PIVOT_TOL)
    if bad.size:
        e = int(bad[0])
        raise LocalSolveError(f"singular local matrix on element {e}: relative pivot {rel[e]:.3e}")
    X = np.concatenate([p[1] for p in parts])
    residual = float(max(p[2].max() for p in parts))
    q, l = X[:, :, :nMl], X[:, :, nMl:]
    return LocalSolverCache(
        disc=disc,
        blocks=blocks,
        Q1=q[:, :nS],
        Q2=q[:, nS : nS + nU],
        Q3=q[:, nS + nU :],
        Q1L=l[:, :nS],
        Q2L=l[:, nS : nS + nU],
        Q3L=l[:, nS + nU :],
        min_pivot=rel,
        residual=residual,
    )


@dataclass(frozen=True)
class Resolvent:
    lam: float
    R: np.ndarray  # (ne, nU, nU) = (I - lam Q2^L)^{-1}
    sigma_min: np.ndarray  # (ne,) smallest singular value of I - lam Q2^L

    @property
    def min_sigma(self) -> float:
        return float(self.sigma_min.min())


def local_resolvent(cache: LocalSolverCache, lam: float) -> Resolvent:
    nU = cache.Q2L.shape[1]
    I = np.eye(nU)
    if lam == 0.0:
        return Resolvent(0.0, np.broadcast_to(I, cache.Q2L.shape).copy(), np.ones(cache.n_elements))
    T = I - lam * cache.Q2L
    smin = np.linalg.svd(T, compute_uv=False).min(axis=1)
    bad = np.flatnonzero(smin < RESOLVENT_TOL)
    if bad.size:
        e = int(bad[0])
        raise ValidityError(
            f"validity bound violated on element {e}: sigma_min(I - lambda Q2^L) = {smin[e]:.3e} at lambda={lam:g}"
        )
    return Resolvent(float(lam), np.linalg.inv(T), smin)
