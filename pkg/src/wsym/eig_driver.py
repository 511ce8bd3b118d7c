"""Condensed linear and nonlinear eigenproblems, and the dense operator-path oracle."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as spla

from .hybrid_system import CondensedSystem, FieldSolution, recover_fields
from .local_solvers import ValidityError, local_resolvent
from .material import MaterialParams
from .mesh import Mesh
from .source_driver import SolverError, setup

log = logging.getLogger(__name__)

DENSE_CAP = 3000
OPERATOR_CAP = 2000
OVERLAP_FLAG = 0.9
CLUSTER_GAP = 1e-6
CLUSTER_WINDOW = 1e-3  # eigenvalues this close (relative) form one tracked subspace


class ConvergenceError(SolverError):
    pass


class TrackingWarning(UserWarning):
    """Eigenvector tracking was ambiguous during the Newton iteration."""


def _top_pencil(a, M, count: int, dense_cap: int = DENSE_CAP):
    """Largest ``count`` nu of M x = nu a x, descending, with x^T a x = 1."""
    n = a.shape[0]
    if count > n:
        raise ValueError(f"requested {count} eigenpairs from a pencil of size {n}")
    if n <= dense_cap:
        nu, X = la.eigh(M.toarray(), a.toarray(), subset_by_index=[n - count, n - 1])
        return nu[::-1], X[:, ::-1]
    lu = spla.splu(a.tocsc())
    Ainv = spla.LinearOperator(a.shape, matvec=lu.solve, dtype=float)
    v0 = np.ones(n) / np.sqrt(n)
    nu, X = spla.eigsh(M, k=count, M=a, Minv=Ainv, which="LA", tol=0.0, v0=v0)
    order = np.argsort(nu)[::-1]
    nu, X = nu[order], X[:, order]
    X /= np.sqrt(np.einsum("ij,ij->j", X, a @ X))
    return nu, X


def solve_linear_condensed(system: CondensedSystem, count: int, dense_cap: int = DENSE_CAP):
    """Smallest ``count`` finite eigenvalues of a_h gamma = lambda M0 gamma.

    Returns (lambdas ascending, gammas as columns with gamma^T M0 gamma = 1).
    """
    n_finite = system.cache.n_elements * system.disc.nU  # rank(M0) <= dim W^h
    if count > min(n_finite, system.n_dofs):
        raise ValueError(f"count {count} exceeds the number of finite eigenvalues ({min(n_finite, system.n_dofs)})")
    nu, X = _top_pencil(system.a, system.M0, count, dense_cap)
    if np.any(nu <= 1e-14 * nu[0]):
        raise ValueError("count exceeds the number of finite eigenvalues")
    return 1.0 / nu, X / np.sqrt(nu)


@dataclass(eq=False)
class EigenResult:
    index: int
    lambda_tilde: float
    lambda_h: float
    gamma: np.ndarray
    solution: FieldSolution | None
    iterations: int
    residual: float
    min_resolvent_sigma: float
    overlap: float = 1.0
    cluster_width: float = np.inf
    history: list = field(default_factory=list)
    flags: list = field(default_factory=list)


def _subspace_overlap(M0, v: np.ndarray, V: np.ndarray) -> float:
    """M0-norm of the M0-orthogonal projection of v onto span(V), relative to |v|."""
    MV = M0 @ V
    c = MV.T @ v
    G = V.T @ MV
    return float(np.sqrt(max(c @ np.linalg.solve(G, c), 0.0) / (v @ (M0 @ v))))


def _pencil_at(system: CondensedSystem, lam: float, nev: int, dense_cap: int):
    res = local_resolvent(system.cache, lam)
    B, dB = system.mass_lambda(lam, resolvent=res, derivative=True)
    nu, X = _top_pencil(system.a, B, nev, dense_cap)
    return res, B, dB, 1.0 / nu, X


def solve_nonlinear(
    system: CondensedSystem,
    init: tuple[float, np.ndarray],
    j: int,
    *,
    rtol: float = 1e-10,
    max_iter: int = 50,
    dense_cap: int = DENSE_CAP,
    recover: bool = True,
    params=None,
) -> EigenResult:
    """Newton on g(lambda) = theta_j(lambda) - lambda for the j-th (0-based) branch."""
    lam0, g0 = init
    lam = float(lam0)
    M0 = system.M0
    gamma_prev = np.asarray(g0)
    theta_prev = lam
    nev = min(j + 3, system.n_dofs)
    hist = []
    flags = []
    min_overlap, min_width = 1.0, np.inf
    for it in range(max_iter + 1):
        try:
            res, B, dB, theta, X = _pencil_at(system, lam, nev, dense_cap)
        except ValidityError as exc:
            raise ConvergenceError(f"eigenvalue {j}: {exc}") from exc
        th = theta[j]
        x = X[:, j]
        gamma = x / np.sqrt(x @ (M0 @ x))
        # eigenvectors may mix within a group whose spread is below the eigenvalue shift
        window = max(CLUSTER_WINDOW, 2.0 * abs(th - theta_prev) / th)
        ov = _subspace_overlap(M0, gamma_prev, X[:, np.abs(theta - th) <= window * th])
        theta_prev = th
        nbr = [theta[i] for i in (j - 1, j + 1) if 0 <= i < len(theta)]
        width = min((abs(t - th) / th for t in nbr), default=np.inf)
        min_overlap, min_width = min(min_overlap, ov), min(min_width, width)
        g = th - lam
        hist.append((lam, th, g))
        log.debug("eig %d it %d lambda=%.15g theta=%.15g g=%.3e overlap=%.3f", j, it, lam, th, g, ov)
        if abs(g) <= rtol * lam:
            break
        if it == max_iter:
            raise ConvergenceError(f"eigenvalue {j}: no convergence in {max_iter} iterations (|g|/lambda={abs(g)/lam:.2e})")
        xBx = x @ (B @ x)
        dtheta = -th * (x @ (dB @ x)) / xBx
        lam = lam - g / (dtheta - 1.0)
        gamma_prev = gamma
        if not lam > 0:
            raise ConvergenceError(f"eigenvalue {j}: Newton produced non-positive lambda")
    if min_overlap < OVERLAP_FLAG:
        flags.append(f"overlap {min_overlap:.3f} below {OVERLAP_FLAG}")
    if min_width < CLUSTER_GAP:
        flags.append(f"cluster: relative gap {min_width:.2e} to a neighbouring eigenvalue")
    if flags:
        warnings.warn(f"eigenvalue {j}: " + "; ".join(flags), TrackingWarning, stacklevel=2)
    lam = th  # fixed point: theta_j(lam) equals lam to rtol
    sol = None
    if recover:
        sol = recover_fields(system, gamma, lam=lam, resolvent=res, params=params, tol=1e-9)
    return EigenResult(
        index=j,
        lambda_tilde=float(lam0),
        lambda_h=float(lam),
        gamma=gamma,
        solution=sol,
        iterations=len(hist) - 1,
        residual=abs(hist[-1][2]) / hist[-1][0],
        min_resolvent_sigma=res.min_sigma,
        overlap=float(min_overlap),
        cluster_width=float(min_width),
        history=hist,
        flags=flags,
    )


def solve_eigen(
    mesh: Mesh,
    params: MaterialParams,
    num: int,
    *,
    k: int = 1,
    rtol: float = 1e-10,
    threads: int | None = None,
    dense_cap: int = DENSE_CAP,
    recover: bool = True,
    prepared=None,
) -> list[EigenResult]:
    """First ``num`` eigenpairs via the linear initial guess and Newton."""
    st = prepared if prepared is not None else setup(mesh, params, k, threads)
    lt, G = solve_linear_condensed(st.system, num, dense_cap)
    out = [
        solve_nonlinear(st.system, (lt[j], G[:, j]), j, rtol=rtol, dense_cap=dense_cap, recover=recover, params=params)
        for j in range(num)
    ]
    return sorted(out, key=lambda r: (r.lambda_h, r.index))


# ----------------------------------------------------------- operator path


@dataclass(eq=False)
class OperatorPath:
    T: np.ndarray  # coefficient matrix of T_h on W^h
    mu: np.ndarray  # eigenvalues of T_h, descending
    lambdas: np.ndarray  # 1 / mu, ascending
    asymmetry: float


def operator_path(mesh: Mesh, params: MaterialParams, k: int = 1, cap: int = OPERATOR_CAP, prepared=None, threads=None):
    """Dense T_h: column i is the displacement of the source solve with f = w_i."""
    st = prepared if prepared is not None else setup(mesh, params, k, threads)
    disc, c, system = st.disc, st.cache, st.system
    ne, nU = mesh.n_elements, disc.nU
    nW = ne * nU
    if nW > cap:
        raise ValueError(f"dim W^h = {nW} exceeds the operator-path cap {cap}")
    rho = c.blocks.rho
    # right-hand sides b_h for every basis load, f = w_(e,i): loads M_U[e][:, i]
    local = rho[:, None, None] * np.einsum("eum,euv->emv", c.Q2, c.blocks.mass_u)  # (ne, nMl, nU)
    rhs = np.zeros((disc.n_mult, ne, nU))
    l2g = disc.local_to_global
    for e in range(ne):
        keep = l2g[e] >= 0
        rhs[l2g[e, keep], e, :] += local[e, keep, :]
    Gam = system.solve(rhs.reshape(disc.n_mult, nW))  # (n_mult, nW)
    gl = disc.gather(Gam)  # (ne, nMl, nW)
    T = np.einsum("eum,emw->euw", c.Q2, gl).reshape(nW, nW)
    T = T.reshape(ne, nU, ne, nU)
    T[np.arange(ne), :, np.arange(ne), :] += c.Q2L
    T = T.reshape(nW, nW)
    Mw = np.zeros((ne, nU, ne, nU))
    Mw[np.arange(ne), :, np.arange(ne), :] = rho[:, None, None] * c.blocks.mass_u
    Mw = Mw.reshape(nW, nW)
    S = Mw @ T
    asym = float(np.abs(S - S.T).max() / np.abs(S).max())
    mu = la.eigh(0.5 * (S + S.T), Mw, eigvals_only=True)[::-1]
    return OperatorPath(T=T, mu=mu, lambdas=1.0 / mu, asymmetry=asym)
