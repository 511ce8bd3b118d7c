"""Element-local recovery of u* in vector P^{k+2} from (sigma_h, u_h, rho_h)."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import fe_basis as fb
from .discretization import Discretization
from .hybrid_system import FieldSolution
from .local_solvers import element_material

PIVOT_TOL = 1e-13


class PostprocessError(RuntimeError):
    pass


@dataclass(eq=False)
class PostField:
    """u* as coefficients (ne, 2, dim P^{k+2}) in the orthonormal scalar basis.

    The first dim P^k scalar functions coincide with the displacement basis;
    the remaining ones span the L2 complement used by the gradient equations.
    """

    disc: Discretization
    coeffs: np.ndarray
    source: FieldSolution | None = None

    @property
    def degree(self) -> int:
        return self.disc.k + 2

    @cached_property
    def chi(self) -> np.ndarray:
        return fb.scalar_values(self.degree, self.disc.rule.points)

    def values(self) -> np.ndarray:
        """(ne, nq, 2) at the discretization's quadrature points."""
        return np.einsum("ema,qa->eqm", self.coeffs, self.chi)

    def grads(self) -> np.ndarray:
        """(ne, nq, 2, 2) with [..., m, j] = d u*_m / d x_j."""
        d = self.disc.physical_grads(fb.scalar_grads(self.degree, self.disc.rule.points))
        return np.einsum("ema,eqaj->eqmj", self.coeffs, d)

    def eval_at(self, elements: np.ndarray, ref_pts: np.ndarray) -> np.ndarray:
        """Values at reference points ``ref_pts`` (n, 2) of elements ``elements`` (n,)."""
        chi = fb.scalar_values(self.degree, ref_pts)
        return np.einsum("nma,na->nm", self.coeffs[elements], chi)

    def grads_at(self, elements: np.ndarray, ref_pts: np.ndarray) -> np.ndarray:
        """Physical gradients (n, 2, 2) at reference points of the given elements."""
        dchi = fb.scalar_grads(self.degree, ref_pts)  # (n, a, l)
        jit = self.disc.geom.jac_inv_t[elements]
        return np.einsum("nma,njl,nal->nmj", self.coeffs[elements], jit, dchi)

    def moment_residual(self) -> float:
        """max |(u* - u_h, v)_K| over v in vector P^k, relative to ||u_h||."""
        disc = self.disc
        diff = self.values() - disc.eval_displacement(self.source.u)
        mom = np.einsum("eq,eqm,qa->ema", disc.wq, diff, disc.psi)
        scale = np.sqrt(np.einsum("eq,eqm,eqm->", disc.wq, *(2 * [disc.eval_displacement(self.source.u)])))
        return float(np.abs(mom).max() / max(scale, 1e-300))


def postprocess_local(field: FieldSolution, params, threads: int | None = None) -> PostField:
    """Solve, on each element, the square system

    (grad u*, grad w)_K = (A sigma_h + rho_h, grad w)_K  for w in the P^k complement of P^{k+2},
    (u*, v)_K = (u_h, v)_K                               for v in vector P^k.
    """
    disc = field.disc
    ne = disc.mesh.n_elements
    d2 = disc.k + 2
    n2, n0 = fb.dim_p(d2), disc.n0
    chi = fb.scalar_values(d2, disc.rule.points)  # (nq, n2)
    dchi = disc.physical_grads(fb.scalar_grads(d2, disc.rule.points))  # (ne, nq, n2, 2)
    wq = disc.wq

    Acomp, _ = element_material(params, ne)
    sig = disc.eval_stress(field.sigma).reshape(ne, -1, 4)
    G = np.einsum("ecd,eqd->eqc", Acomp, sig).reshape(ne, -1, 2, 2) + disc.eval_rotation(field.rho)

    S = np.einsum("eq,eqaj,eqbj->eab", wq, dchi, dchi)  # scalar stiffness
    M = np.einsum("eq,qa,qb->eab", wq, chi, chi)
    # rows: complement (gradient) equations, then P^k moment equations; per component
    K = np.concatenate([S[:, n0:, :], M[:, :n0, :]], axis=1)  # (ne, n2, n2)
    rg = np.einsum("eq,eqmj,eqbj->ebm", wq, G, dchi[:, :, n0:, :])
    rm = np.einsum("eq,eqm,qb->ebm", wq, disc.eval_displacement(field.u), chi[:, :n0])
    rhs = np.concatenate([rg, rm], axis=1)  # (ne, n2, 2)

    piv = np.abs(np.linalg.svd(K, compute_uv=False))
    rel = piv[:, -1] / piv[:, 0]
    bad = np.flatnonzero(rel < PIVOT_TOL)
    if bad.size:
        raise PostprocessError(f"singular postprocessing matrix on element {int(bad[0])}")
    c = np.linalg.solve(K, rhs)  # (ne, n2, 2)
    return PostField(disc=disc, coeffs=c.transpose(0, 2, 1).copy(), source=field)
