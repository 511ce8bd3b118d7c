"""Tabulated bases, element geometry and DOF maps for one (mesh, k) pair."""
from __future__ import annotations

from functools import cached_property

import numpy as np

from . import fe_basis as fb
from .mesh import FaceTag, Mesh

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def face_reference_points(f: int, t: np.ndarray) -> np.ndarray:
    """Reference coordinates on local face f, parameter t from v[f+1] to v[f+2]."""
    a, b = REF_VERTICES[(f + 1) % 3], REF_VERTICES[(f + 2) % 3]
    return a + np.asarray(t)[..., None] * (b - a)


class Discretization:
    """Everything shared by the element-local computations on one mesh.

    Multiplier basis on a face: Legendre polynomials orthonormal on [0, 1] in
    the global face parameter (from the lower to the higher vertex index),
    scaled by 1/sqrt(h_F), i.e. L2(F)-orthonormal.  Faces on Gamma_0 carry no
    multiplier unknowns.
    """

    def __init__(self, mesh: Mesh, k: int, quad_degree: int | None = None):
        fb._check_k(k)
        self.mesh = mesh
        self.k = k
        self.quad_degree = fb.default_degree(k) if quad_degree is None else quad_degree
        self.rule = fb.triangle_rule(self.quad_degree)
        self.erule = fb.edge_rule(self.quad_degree)
        self.n1 = fb.dim_p(k + 1)
        self.n0 = fb.dim_p(k)
        self.nS = 4 * self.n1
        self.nU = 2 * self.n0
        self.nR = self.n1
        self.nE = k + 2
        self.nMf = 2 * self.nE
        self.nMl = 3 * self.nMf
        self.geom = mesh.geometry

    # ------------------------------------------------------------ tabulation
    @cached_property
    def phi(self) -> np.ndarray:
        return fb.scalar_values(self.k + 1, self.rule.points)

    @cached_property
    def psi(self) -> np.ndarray:
        return fb.scalar_values(self.k, self.rule.points)

    @cached_property
    def dphi_ref(self) -> np.ndarray:
        return fb.scalar_grads(self.k + 1, self.rule.points)

    @cached_property
    def dpsi_ref(self) -> np.ndarray:
        return fb.scalar_grads(self.k, self.rule.points)

    @cached_property
    def mass1_ref(self) -> np.ndarray:
        return np.einsum("q,qa,qb->ab", self.rule.weights, self.phi, self.phi)

    @cached_property
    def mass0_ref(self) -> np.ndarray:
        return np.einsum("q,qa,qb->ab", self.rule.weights, self.psi, self.psi)

    @cached_property
    def xq(self) -> np.ndarray:
        """Physical quadrature points (ne, nq, 2)."""
        g = self.geom
        return g.origin[:, None, :] + np.einsum("eij,qj->eqi", g.jac, self.rule.points)

    @cached_property
    def wq(self) -> np.ndarray:
        return self.geom.det[:, None] * self.rule.weights[None, :]

    def physical_grads(self, ref_grads: np.ndarray) -> np.ndarray:
        """(nq, n, 2) reference gradients -> (ne, nq, n, 2)."""
        return np.einsum("eij,qnj->eqni", self.geom.jac_inv_t, ref_grads)

    def edge_tables(self, degree: int) -> np.ndarray:
        """Scalar P^degree values at edge points in global parameter order.

        Returns (2, 3, ng, n): index 0 for sign +1 (local parameter = global),
        index 1 for sign -1 (local parameter = 1 - global).
        """
        t = self.erule.points
        out = []
        for tt in (t, 1.0 - t):
            out.append(np.stack([fb.scalar_values(degree, face_reference_points(f, tt)) for f in range(3)]))
        return np.stack(out)

    def element_edge_values(self, degree: int) -> np.ndarray:
        """(ne, 3, ng, n) scalar P^degree traces, ordered by global face parameter."""
        tab = self.edge_tables(degree)
        sel = (self.mesh.element_face_signs < 0).astype(int)  # (ne, 3)
        return tab[sel, np.arange(3)[None, :]]

    @cached_property
    def legendre_edge(self) -> np.ndarray:
        """(ng, nE) [0,1]-orthonormal Legendre values at edge points."""
        return fb.legendre_values(self.nE - 1, self.erule.points)

    # ------------------------------------------------------------- DOF maps
    @cached_property
    def face_dof_offset(self) -> np.ndarray:
        tags = self.mesh.face_tags
        off = np.full(len(tags), -1, dtype=np.int64)
        free = np.flatnonzero(tags != FaceTag.DIRICHLET)
        off[free] = np.arange(len(free)) * self.nMf
        return off

    @property
    def n_mult(self) -> int:
        return int(np.sum(self.face_dof_offset >= 0)) * self.nMf

    @cached_property
    def local_to_global(self) -> np.ndarray:
        """(ne, nMl) global multiplier DOF of each local one, -1 on Gamma_0."""
        off = self.face_dof_offset[self.mesh.element_faces]  # (ne, 3)
        loc = np.arange(self.nMf)
        g = off[:, :, None] + loc[None, None, :]
        g = np.where(off[:, :, None] >= 0, g, -1)
        return g.reshape(self.mesh.n_elements, self.nMl)

    def gather(self, gamma: np.ndarray) -> np.ndarray:
        """Global multiplier vector(s) -> local (ne, nMl[, ...]) with zeros on Gamma_0."""
        l2g = self.local_to_global
        out = np.asarray(gamma)[np.maximum(l2g, 0)]
        mask = (l2g < 0).reshape(l2g.shape + (1,) * (out.ndim - 2))
        return np.where(mask, 0.0, out)

    def scatter(self, local: np.ndarray) -> np.ndarray:
        """Sum local (ne, nMl) contributions into a global vector in element order."""
        l2g = self.local_to_global.ravel()
        vals = np.asarray(local).reshape(-1)
        keep = l2g >= 0
        return np.bincount(l2g[keep], weights=vals[keep], minlength=self.n_mult)

    # ------------------------------------------------------------ evaluation
    def eval_stress(self, coeffs: np.ndarray) -> np.ndarray:
        """(ne, nS) -> (ne, nq, 2, 2)."""
        c = coeffs.reshape(-1, 4, self.n1)
        v = np.einsum("eca,qa->eqc", c, self.phi)
        return v.reshape(v.shape[0], v.shape[1], 2, 2)

    def eval_displacement(self, coeffs: np.ndarray) -> np.ndarray:
        c = coeffs.reshape(-1, 2, self.n0)
        return np.einsum("ema,qa->eqm", c, self.psi)

    def eval_displacement_grad(self, coeffs: np.ndarray) -> np.ndarray:
        """(ne, nq, 2, 2) with [.., m, j] = d u_m / d x_j."""
        c = coeffs.reshape(-1, 2, self.n0)
        return np.einsum("ema,eqaj->eqmj", c, self.physical_grads(self.dpsi_ref))

    def eval_rotation(self, coeffs: np.ndarray) -> np.ndarray:
        s = coeffs @ self.phi.T  # (ne, nq)
        return s[..., None, None] * fb.SKEW

    def load_vector(self, f) -> np.ndarray:
        """(ne, nU) moments of a callable load f(x) -> (..., 2) against W(K)."""
        vals = np.asarray(f(self.xq))  # (ne, nq, 2)
        return np.einsum("eq,eqm,qa->ema", self.wq, vals, self.psi).reshape(-1, self.nU)

    @cached_property
    def mass_u(self) -> np.ndarray:
        """(ne, nU, nU) displacement mass matrices."""
        return self.geom.det[:, None, None] * np.kron(np.eye(2), self.mass0_ref)[None]

    def project_displacement(self, u) -> np.ndarray:
        """L2 projection of a callable onto W^h, coefficients (ne, nU)."""
        return np.linalg.solve(self.mass_u, self.load_vector(u)[..., None])[..., 0]
