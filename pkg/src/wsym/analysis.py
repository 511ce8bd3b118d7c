"""Norms, projections, BDM interpolation, error reports and extrapolation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import fe_basis as fb
from .discretization import Discretization
from .hybrid_system import FieldSolution
from .local_solvers import build_local_blocks
from .material import MaterialParams, compliance_apply
from .mesh import FaceTag
from .postprocess import PostField

EXACT_TOL = 1e-13


# ------------------------------------------------------------------ norms


def _face_sides(disc: Discretization):
    """For each face: (element, local face) of both sides, -1 where absent."""
    mesh = disc.mesh
    fe = mesh.face_elements
    loc = np.full(fe.shape, -1, dtype=np.int64)
    for s in range(2):
        has = fe[:, s] >= 0
        e = fe[has, s]
        f = np.flatnonzero(has)
        loc[has, s] = np.argmax(mesh.element_faces[e] == f[:, None], axis=1)
    return fe, loc


def discrete_h1_norm(disc: Discretization, u: np.ndarray) -> float:
    """(sum_K |grad u|^2_K + sum_{F interior or Gamma_0} h_F^{-1} |[u]|^2_F)^{1/2}."""
    grad = disc.eval_displacement_grad(u)
    vol = np.einsum("eq,eqmj,eqmj->", disc.wq, grad, grad)
    tr = np.einsum("efga,ema->efgm", disc.element_edge_values(disc.k), u.reshape(-1, 2, disc.n0))
    fe, loc = _face_sides(disc)
    tags = disc.mesh.face_tags
    inner = tags == FaceTag.INTERIOR
    dirich = tags == FaceTag.DIRICHLET
    w = disc.erule.weights
    jump = tr[fe[inner, 0], loc[inner, 0]] - tr[fe[inner, 1], loc[inner, 1]]
    bnd = tr[fe[dirich, 0], loc[dirich, 0]]
    # h_F^{-1} * (h_F sum_g w_g |.|^2)
    jumps = np.einsum("g,fgm,fgm->", w, jump, jump) + np.einsum("g,fgm,fgm->", w, bnd, bnd)
    return float(np.sqrt(vol + jumps))


def l2_norm_vector(disc: Discretization, vals: np.ndarray) -> float:
    """L2 norm of values (ne, nq, ...) at the quadrature points."""
    v = vals.reshape(vals.shape[0], vals.shape[1], -1)
    return float(np.sqrt(np.einsum("eq,eqc,eqc->", disc.wq, v, v)))


def broken_h1_seminorm(disc: Discretization, grads: np.ndarray) -> float:
    return l2_norm_vector(disc, grads)


# ------------------------------------------------------------ projections


def l2_projection_W(u, disc: Discretization) -> np.ndarray:
    return disc.project_displacement(u)


def l2_projection_A(r, disc: Discretization) -> np.ndarray:
    """Projection of the skew field r J onto A^h; r is a scalar callable."""
    vals = np.asarray(r(disc.xq)).reshape(disc.xq.shape[:2])
    rhs = np.einsum("eq,eq,qa->ea", disc.wq, vals, disc.phi)
    M = disc.geom.det[:, None, None] * disc.mass1_ref[None]
    return np.linalg.solve(M, rhs[..., None])[..., 0]


# ----------------------------------------------------------------- BDM


@lru_cache(maxsize=8)
def _nedelec_table(k: int, degree: int):
    rule = fb.triangle_rule(degree)
    return fb.build_basis("nedelec_moment", k)(rule.points)  # (nq, nN, 2)


def bdm_dof_matrix(disc: Discretization) -> np.ndarray:
    """(ne, n, n) per-row DOF matrix: face moments against P^{k+1}(F), then N^k moments."""
    blocks = build_local_blocks(disc, MaterialParams())
    ne, n1, nE = disc.mesh.n_elements, disc.n1, disc.nE
    D = blocks.D.reshape(ne, 3, 2, nE, 2, 2, n1)[:, :, 0, :, 0]  # row 0 block, (ne, 3, nE, 2, n1)
    face = D.reshape(ne, 3 * nE, 2 * n1)
    Nv = _physical_nedelec(disc)  # (ne, nq, nN, 2)
    inter = np.einsum("eq,eqlj,qa->elja", disc.wq, Nv, disc.phi).reshape(ne, -1, 2 * n1)
    return np.concatenate([face, inter], axis=1)


def _physical_nedelec(disc: Discretization) -> np.ndarray:
    """Covariant Piola map of the reference N^k basis, J^{-T} v_hat."""
    ref = _nedelec_table(disc.k, disc.quad_degree)
    return np.einsum("eij,qlj->eqli", disc.geom.jac_inv_t, ref)


def bdm_interpolant(tau, disc: Discretization) -> np.ndarray:
    """Broken stress coefficients (ne, nS) of the row-wise BDM interpolant of tau(x) -> (..., 2, 2)."""
    mesh = disc.mesh
    g = disc.geom
    ne, nE = mesh.n_elements, disc.nE
    t = disc.erule.points
    # face moments in the global face parameter, matching the D block convention
    faces = mesh.faces[mesh.element_faces]  # (ne, 3, 2)
    a, b = mesh.vertices[faces[..., 0]], mesh.vertices[faces[..., 1]]
    pts = a[:, :, None, :] + t[None, None, :, None] * (b - a)[:, :, None, :]
    tn = np.einsum("efgij,efj->efgi", tau(pts), g.normals)
    fm = np.einsum("g,gq,efgi->eifq", disc.erule.weights, disc.legendre_edge, tn)
    fm = fm * np.sqrt(g.face_length)[:, None, :, None]
    Nv = _physical_nedelec(disc)
    im = np.einsum("eq,eqlj,eqij->eil", disc.wq, Nv, tau(disc.xq))
    rhs = np.concatenate([fm.reshape(ne, 2, 3 * nE), im], axis=2)  # (ne, 2 rows, n)
    Mdof = bdm_dof_matrix(disc)
    cond = np.linalg.cond(Mdof)
    if not np.all(np.isfinite(cond)) or cond.max() > 1e12:
        raise np.linalg.LinAlgError("BDM degrees of freedom are not unisolvent")
    c = np.linalg.solve(Mdof[:, None], rhs[..., None])[..., 0]  # (ne, 2, 2*n1) per row (i), cols (j, a)
    return c.reshape(ne, disc.nS)


def divergence_coeffs(disc: Discretization, sigma: np.ndarray) -> np.ndarray:
    """W^h coefficients of the row-wise divergence of a broken P^{k+1} stress."""
    B = build_local_blocks(disc, MaterialParams()).B
    return np.linalg.solve(disc.mass_u, np.einsum("eus,es->eu", B, sigma)[..., None])[..., 0]


COMMUTING_QUAD_DEGREE = 20


def commuting_residual(tau, div_tau, disc: Discretization, quad_degree: int = COMMUTING_QUAD_DEGREE) -> float:
    """|| div Pi_h tau - P div tau ||_0.

    The identity is exact only up to the quadrature error in the moments of a
    non-polynomial tau, so the check integrates at the highest rule degree.
    """
    if quad_degree != disc.quad_degree:
        disc = Discretization(disc.mesh, disc.k, quad_degree)
    d = divergence_coeffs(disc, bdm_interpolant(tau, disc)) - disc.project_displacement(div_tau)
    return l2_norm_vector(disc, disc.eval_displacement(d))


# ---------------------------------------------------------------- errors


ERROR_QUAD_DEGREE = 20


def field_errors(sol: FieldSolution, case, post: PostField | None = None, quad_degree: int = ERROR_QUAD_DEGREE) -> dict:
    """Errors of a source solution against a manufactured case.

    The fields are re-tabulated on a rule of degree ``quad_degree`` so that
    the errors are saturated: at the solver's default degree 2k+8 the
    integrals of smooth error fields are still off by up to a few percent.
    """
    if quad_degree != sol.disc.quad_degree:
        disc = Discretization(sol.disc.mesh, sol.disc.k, quad_degree)
        sol = replace(sol, disc=disc)
        if post is not None:
            post = replace(post, disc=disc)
    disc = sol.disc
    x = disc.xq
    out = {
        "err_sigma_l2": l2_norm_vector(disc, case.sigma(x) - disc.eval_stress(sol.sigma)),
        "err_rho_l2": l2_norm_vector(disc, case.rotation_matrix(x) - disc.eval_rotation(sol.rho)),
        "err_u_l2": l2_norm_vector(disc, case.u(x) - disc.eval_displacement(sol.u)),
        "err_Pu_1h": discrete_h1_norm(disc, l2_projection_W(case.u, disc) - sol.u),
    }
    if post is not None:
        out["err_post_h1"] = broken_h1_seminorm(disc, case.grad_u(x) - post.grads())
        out["err_post_l2"] = l2_norm_vector(disc, case.u(x) - post.values())
    return out


def stability_ratio(sol: FieldSolution, params) -> float:
    """||u_h||_{1,h}^2 / ||A sigma_h||_0^2."""
    disc = sol.disc
    As = compliance_apply(disc.eval_stress(sol.sigma), params)
    return discrete_h1_norm(disc, sol.u) ** 2 / l2_norm_vector(disc, As) ** 2


def observed_order(e_coarse: float, e_fine: float, ratio: float = 2.0) -> float:
    """log_ratio(e_coarse / e_fine), NaN when either error is at roundoff level."""
    if not (e_coarse > EXACT_TOL and e_fine > EXACT_TOL):
        return math.nan
    return math.log(e_coarse / e_fine) / math.log(ratio)


def orders(errors, h=None) -> list[float]:
    errors = list(errors)
    if h is None:
        return [observed_order(a, b) for a, b in zip(errors, errors[1:])]
    h = list(h)
    return [observed_order(a, b, hc / hf) for a, b, hc, hf in zip(errors, errors[1:], h, h[1:])]


def richardson(values, p: float, ratio: float = 2.0) -> float:
    """Extrapolate from the last len(values) levels, eliminating h^p, h^{p+1}, ...

    Two values eliminate h^p; three eliminate h^p and h^{p+1}.
    """
    v = np.asarray(values, dtype=float)
    n = len(v)
    if n < 2:
        raise ValueError("need at least two levels")
    # v_i = L + sum_{s<n-1} c_s h_i^{p+s}, h_i = ratio^{-i}
    h = ratio ** -np.arange(n, dtype=float)
    V = np.column_stack([np.ones(n)] + [h ** (p + s) for s in range(n - 1)])
    return float(np.linalg.solve(V, v)[0])


def aitken_orders(values, ratio: float = 2.0) -> list[float]:
    """Reference-free orders log_r((v_{i}-v_{i-1}) / (v_{i+1}-v_i))."""
    v = np.asarray(values, dtype=float)
    d = np.diff(v)
    out = []
    for a, b in zip(d, d[1:]):
        out.append(math.log(abs(a / b)) / math.log(ratio) if a != 0 and b != 0 else math.nan)
    return out


@dataclass
class ErrorReport:
    """Per-level records plus observed orders between consecutive levels."""

    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, **rec):
        self.records.append(rec)

    def column(self, key) -> list:
        return [r.get(key, math.nan) for r in self.records]

    def orders(self, key) -> list[float]:
        return orders(self.column(key))

    def min_order(self, key, last: int | None = None) -> float:
        o = [x for x in self.orders(key) if not math.isnan(x)]
        if last is not None:
            o = o[-last:]
        return min(o) if o else math.nan

    def variation(self, key) -> float:
        """max/min ratio of a column (locking sweeps)."""
        c = np.asarray(self.column(key), dtype=float)
        return float(c.max() / c.min())
