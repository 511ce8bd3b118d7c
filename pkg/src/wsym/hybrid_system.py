"""Condensed multiplier-space operators, the full hybrid KKT oracle, and field recovery."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import Discretization
from .local_solvers import LocalSolverCache, Resolvent, local_resolvent, map_chunks

KKT_CAP = 20_000
RECOVERY_TOL = 1e-10


class ConsistencyError(RuntimeError):
    """Recovered fields fail the hybrid equations."""


def _assemble(disc: Discretization, local: np.ndarray) -> sp.csr_array:
    """Sum (ne, nMl, nMl) element matrices into the global multiplier space."""
    l2g = disc.local_to_global
    rows = np.broadcast_to(l2g[:, :, None], local.shape)
    cols = np.broadcast_to(l2g[:, None, :], local.shape)
    keep = (rows >= 0) & (cols >= 0)
    n = disc.n_mult
    mat = sp.coo_array((local[keep], (rows[keep], cols[keep])), shape=(n, n))
    return mat.tocsr()


def _batched(fn, ne: int, threads: int | None) -> np.ndarray:
    return np.concatenate(map_chunks(fn, ne, threads))


@dataclass(eq=False)
class CondensedSystem:
    """a_h and M0 on the multiplier space M^h (Gamma_0 faces excluded).

    The load functional is b_h(mu) = rho_S (f, Q2 mu); with rho_S = 1 this
    is the usual right-hand side.  M0 carries the same rho_S weight so that
    eigenvalues scale exactly like 1/rho_S.
    """

    cache: LocalSolverCache
    a: sp.csr_array
    M0: sp.csr_array
    a_local: np.ndarray = field(repr=False)
    threads: int | None = None

    @property
    def disc(self) -> Discretization:
        return self.cache.disc

    @property
    def n_dofs(self) -> int:
        return self.a.shape[0]

    @cached_property
    def _lu(self):
        return spla.splu(self.a.tocsc())

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(rhs, dtype=float))

    def load_vector(self, F: np.ndarray) -> np.ndarray:
        """b_h from element load moments F (ne, nU)."""
        c = self.cache
        local = c.blocks.rho[:, None] * np.einsum("eum,eu->em", c.Q2, F)
        return self.disc.scatter(local)

    def mass_lambda(self, lam: float, resolvent: Resolvent | None = None, derivative: bool = False):
        """B(lambda), and optionally B'(lambda), as sparse matrices."""
        c = self.cache
        res = resolvent if resolvent is not None else local_resolvent(c, lam)
        if lam == 0.0 and not derivative:
            return self.M0.copy()
        rho = c.blocks.rho
        MQ2 = np.einsum("euv,evm->eum", c.blocks.mass_u, c.Q2)

        def work(s):
            RQ2 = res.R[s] @ c.Q2[s]
            return rho[s, None, None] * np.einsum("eum,eun->emn", MQ2[s], RQ2)

        B = _assemble(self.disc, _batched(work, c.n_elements, self.threads))
        if not derivative:
            return B

        def dwork(s):
            RQ2 = res.R[s] @ c.Q2[s]
            inner = res.R[s] @ (c.Q2L[s] @ RQ2)
            return rho[s, None, None] * np.einsum("eum,eun->emn", MQ2[s], inner)

        return B, _assemble(self.disc, _batched(dwork, c.n_elements, self.threads))


def assemble_condensed(cache: LocalSolverCache, threads: int | None = None) -> CondensedSystem:
    D, Q1, Q2 = cache.blocks.D, cache.Q1, cache.Q2
    rho, M = cache.blocks.rho, cache.blocks.mass_u

    def awork(s):
        # a_K = Q1^T A Q1 = -D Q1; the second form avoids squaring the
        # O(lambda_S) pressure component of Q1
        a = -np.einsum("eis,esm->eim", D[s], Q1[s])
        return 0.5 * (a + a.transpose(0, 2, 1))

    def mwork(s):
        return rho[s, None, None] * np.einsum("eum,euv,evn->emn", Q2[s], M[s], Q2[s])

    a_local = _batched(awork, cache.n_elements, threads)
    a = _assemble(cache.disc, a_local)
    M0 = _assemble(cache.disc, _batched(mwork, cache.n_elements, threads))
    return CondensedSystem(cache=cache, a=a, M0=M0, a_local=a_local, threads=threads)


def assemble_mass_lambda(system: CondensedSystem, lam: float, derivative: bool = False):
    return system.mass_lambda(lam, derivative=derivative)


# ------------------------------------------------------------------ fields


@dataclass(eq=False)
class FieldSolution:
    """Per-element coefficients of (sigma_h, u_h, rho_h) and global multipliers."""

    disc: Discretization
    sigma: np.ndarray  # (ne, nS)
    u: np.ndarray  # (ne, nU)
    rho: np.ndarray  # (ne, nR)
    gamma: np.ndarray  # (n_mult,)
    params: object = None
    lam: float | None = None
    residuals: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.disc.k

    def weak_symmetry_residual(self, blocks) -> float:
        """max |(sigma_h, eta)_K| over skew basis eta, relative to ||sigma_h||."""
        r = np.einsum("ers,es->er", blocks.C, self.sigma)
        norm = np.sqrt(np.einsum("es,est,et->", self.sigma, _stress_mass(self.disc), self.sigma))
        return float(np.abs(r).max() / max(norm, 1e-300))

    def trace_moments(self, blocks) -> np.ndarray:
        """<mu, [sigma_h n]> for every free multiplier basis function."""
        return self.disc.scatter(np.einsum("eis,es->ei", blocks.D, self.sigma))

    def trace_residual(self, blocks, sigma_abs: np.ndarray | None = None) -> float:
        """Largest trace moment relative to the moments of |sigma_h|.

        ``sigma_abs`` may bound |sigma_h| by the magnitudes of the terms it was
        summed from, which keeps the check meaningful when they cancel.
        """
        num = np.abs(self.trace_moments(blocks)).max(initial=0.0)
        mag = np.abs(self.sigma) if sigma_abs is None else sigma_abs
        scale = np.abs(self.disc.scatter(np.einsum("eis,es->ei", np.abs(blocks.D), mag)))
        return float(num / max(scale.max(initial=0.0), 1e-300))


def _stress_mass(disc: Discretization) -> np.ndarray:
    return disc.geom.det[:, None, None] * np.kron(np.eye(4), disc.mass1_ref)[None]


def _local_residual(cache: LocalSolverCache, sigma, u, rho, gamma_loc, rhs_u, sigma_abs) -> float:
    b = cache.blocks
    r1 = (
        np.einsum("est,et->es", b.A, sigma)
        + np.einsum("eus,eu->es", b.B, u)
        + np.einsum("ers,er->es", b.C, rho)
        + np.einsum("eis,ei->es", b.D, gamma_loc)
    )
    r2 = np.einsum("eus,es->eu", b.B, sigma) - rhs_u
    r3 = np.einsum("ers,es->er", b.C, sigma)
    scale = (
        np.abs(b.A) @ sigma_abs[..., None]
        + np.abs(b.B.transpose(0, 2, 1)) @ np.abs(u)[..., None]
        + np.abs(b.D.transpose(0, 2, 1)) @ np.abs(gamma_loc)[..., None]
    ).max() + np.abs(rhs_u).max()
    top = max(np.abs(r1).max(), np.abs(r2).max(), np.abs(r3).max())
    return float(top / max(scale, 1e-300))


def recover_fields(
    system: CondensedSystem,
    gamma: np.ndarray,
    *,
    load: np.ndarray | None = None,
    lam: float | None = None,
    resolvent: Resolvent | None = None,
    params=None,
    extra_local: np.ndarray | None = None,
    check: bool = True,
    tol: float = RECOVERY_TOL,
) -> FieldSolution:
    """Source mode when ``load`` (element moments, ne x nU) is given, eigen mode when ``lam`` is.

    ``extra_local`` adds prescribed local multiplier values (Gamma_0 data).
    """
    c = system.cache
    disc = c.disc
    if (load is None) == (lam is None):
        raise ValueError("give exactly one of load (source mode) or lam (eigen mode)")
    gl = disc.gather(gamma)
    if extra_local is not None:
        gl = gl + extra_local
    rho_s = c.blocks.rho[:, None]
    if load is not None:
        cf = np.linalg.solve(c.blocks.mass_u, load[..., None])[..., 0]
        sigma = np.einsum("esm,em->es", c.Q1, gl) + np.einsum("esu,eu->es", c.Q1L, cf)
        u = np.einsum("eum,em->eu", c.Q2, gl) + np.einsum("evu,eu->ev", c.Q2L, cf)
        rho = np.einsum("erm,em->er", c.Q3, gl) + np.einsum("eru,eu->er", c.Q3L, cf)
        rhs_u = -rho_s * load
        sig_abs = np.abs(c.Q1) @ np.abs(gl)[..., None] + np.abs(c.Q1L) @ np.abs(cf)[..., None]
    else:
        res = resolvent if resolvent is not None else local_resolvent(c, lam)
        u = np.einsum("euv,evm,em->eu", res.R, c.Q2, gl)
        sigma = np.einsum("esm,em->es", c.Q1, gl) + lam * np.einsum("esu,eu->es", c.Q1L, u)
        rho = np.einsum("erm,em->er", c.Q3, gl) + lam * np.einsum("eru,eu->er", c.Q3L, u)
        rhs_u = -rho_s * lam * np.einsum("euv,ev->eu", c.blocks.mass_u, u)
        sig_abs = np.abs(c.Q1) @ np.abs(gl)[..., None] + lam * np.abs(c.Q1L) @ np.abs(u)[..., None]
    sol = FieldSolution(disc, sigma, u, rho, np.asarray(gamma, dtype=float).copy(), params=params, lam=lam)
    # rounding in sigma scales with its summands, which cancel for large lambda_S
    sig_abs = sig_abs[..., 0]
    sol.residuals["local"] = _local_residual(c, sigma, u, rho, gl, rhs_u, sig_abs)
    sol.residuals["trace"] = sol.trace_residual(c.blocks, sig_abs)
    sol.residuals["weak_symmetry"] = sol.weak_symmetry_residual(c.blocks)
    if check:
        bad = {k: v for k, v in sol.residuals.items() if not v <= tol}
        if bad:
            raise ConsistencyError(f"recovered fields violate the hybrid equations: {bad}")
    return sol


# --------------------------------------------------------------- full KKT


@dataclass(eq=False)
class FullKKT:
    matrix: sp.csr_array
    n_local: int  # per-element (sigma, u, rho) block size
    n_elements: int
    n_mult: int

    @property
    def n_unknowns(self) -> int:
        return self.matrix.shape[0]

    def rhs(self, cache: LocalSolverCache, load: np.ndarray) -> np.ndarray:
        disc = cache.disc
        b = np.zeros((self.n_elements, self.n_local))
        b[:, disc.nS : disc.nS + disc.nU] = -cache.blocks.rho[:, None] * load
        return np.concatenate([b.ravel(), np.zeros(self.n_mult)])

    def split(self, x: np.ndarray, disc: Discretization):
        loc = x[: self.n_elements * self.n_local].reshape(self.n_elements, self.n_local)
        nS, nU = disc.nS, disc.nU
        return loc[:, :nS], loc[:, nS : nS + nU], loc[:, nS + nU :], x[self.n_elements * self.n_local :]

    def lift(self, sol: FieldSolution) -> np.ndarray:
        loc = np.concatenate([sol.sigma, sol.u, sol.rho], axis=1)
        return np.concatenate([loc.ravel(), sol.gamma])


def assemble_full_kkt(cache: LocalSolverCache, cap: int = KKT_CAP) -> FullKKT:
    """Unassembled-stress hybrid system over (sigma, u, rho) per element and gamma."""
    from .local_solvers import saddle_matrix

    disc = cache.disc
    ne = cache.n_elements
    K = saddle_matrix(cache.blocks)
    nl = K.shape[1]
    n_total = ne * nl + disc.n_mult
    if n_total > cap:
        raise ValueError(f"full KKT system has {n_total} unknowns, above the cap {cap}")
    off = (np.arange(ne) * nl)[:, None, None]
    idx = np.arange(nl)
    rows = [np.broadcast_to(off + idx[None, :, None], K.shape).ravel()]
    cols = [np.broadcast_to(off + idx[None, None, :], K.shape).ravel()]
    vals = [K.ravel()]
    # D couples stress (first nS local slots) with the global multipliers
    D = cache.blocks.D  # (ne, nMl, nS)
    g = np.broadcast_to(disc.local_to_global[:, :, None], D.shape)
    s = np.broadcast_to(off + np.arange(disc.nS)[None, None, :], D.shape)
    keep = g >= 0
    gi = ne * nl + g[keep]
    rows += [gi, s[keep]]
    cols += [s[keep], gi]
    vals += [D[keep], D[keep]]
    mat = sp.coo_array(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_total, n_total)
    ).tocsr()
    return FullKKT(matrix=mat, n_local=nl, n_elements=ne, n_mult=disc.n_mult)
