"""Source problem via the condensed path, plus a catalog of manufactured solutions."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import sympy as sp

from .discretization import Discretization
from .hybrid_system import CondensedSystem, FieldSolution, assemble_condensed, recover_fields
from .local_solvers import LocalSolverCache, factorize_local
from .material import MaterialParams
from .mesh import FaceTag, Mesh


class SolverError(RuntimeError):
    pass


# ------------------------------------------------------------ manufactured

_X, _Y = sp.symbols("x y", real=True)


def _vectorize(fn, shape):
    """Lambdified sympy expression -> numpy callable on (..., 2) points."""

    def call(pts):
        pts = np.asarray(pts, dtype=float)
        out = fn(pts[..., 0], pts[..., 1])  # flat list of components
        comps = [np.broadcast_to(np.asarray(v, dtype=float), pts.shape[:-1]) for v in out]
        return np.stack(comps, axis=-1).reshape(pts.shape[:-1] + shape)

    return call


@dataclass(frozen=True)
class ManufacturedCase:
    """Closed-form displacement and the fields derived from it.

    ``rotation`` is the scalar r with skew(grad u) = r J, J = [[0, 1], [-1, 0]].
    ``dirichlet`` marks cases whose displacement does not vanish on the
    boundary; these are solved with the boundary trace as Gamma_0 data.
    """

    name: str
    params: MaterialParams
    u: Callable
    grad_u: Callable
    sigma: Callable
    rotation: Callable
    f: Callable
    div_u: Callable
    divergence_free: bool = False
    dirichlet: bool = False
    symbolic: dict = field(default_factory=dict, repr=False, compare=False)

    def rotation_matrix(self, pts):
        return self.rotation(pts)[..., 0, None, None] * np.array([[0.0, 1.0], [-1.0, 0.0]])


def _build_case(name: str, u_expr, params: MaterialParams, divergence_free=False, dirichlet=False):
    mu, lam, rho = (sp.nsimplify(v) for v in (params.mu_s, params.lambda_s, params.rho_s))
    u = sp.Matrix(u_expr)
    G = u.jacobian([_X, _Y])
    eps = (G + G.T) / 2
    sig = 2 * mu * eps + lam * eps.trace() * sp.eye(2)
    r = sp.simplify((G[0, 1] - G[1, 0]) / 2)
    divsig = sp.Matrix([sp.diff(sig[i, 0], _X) + sp.diff(sig[i, 1], _Y) for i in range(2)])
    f = sp.simplify(-divsig / rho)
    divu = sp.simplify(G.trace())

    def lamb(expr, shape):
        return _vectorize(sp.lambdify((_X, _Y), list(sp.Matrix(expr)), "numpy"), shape)

    return ManufacturedCase(
        name=name,
        params=params,
        u=lamb(u, (2,)),
        grad_u=lamb(G, (2, 2)),
        sigma=lamb(sig, (2, 2)),
        rotation=lamb([r], (1,)),
        f=lamb(f, (2,)),
        div_u=lamb([divu], (1,)),
        divergence_free=divergence_free,
        dirichlet=dirichlet,
        symbolic={"u": u, "sigma": sig, "rotation": r, "f": f},
    )


CASE_NAMES = ("smooth", "divfree", "polynomial")


@lru_cache(maxsize=64)
def get_case(name: str, params: MaterialParams = MaterialParams()) -> ManufacturedCase:
    x, y = _X, _Y
    if name == "smooth":
        s = sp.sin(sp.pi * x) * sp.sin(sp.pi * y)
        return _build_case(name, [s, s], params)
    if name == "divfree":
        psi = (x * (1 - x) * y * (1 - y)) ** 2
        return _build_case(name, [sp.diff(psi, y), -sp.diff(psi, x)], params, divergence_free=True)
    if name == "polynomial":
        return _build_case(name, [x * (1 - x), x * y], params, dirichlet=True)
    raise ValueError(f"unknown manufactured case {name!r}; choose from {CASE_NAMES}")


def manufactured_catalog(params: MaterialParams = MaterialParams()) -> list[ManufacturedCase]:
    return [get_case(n, params) for n in CASE_NAMES]


# ----------------------------------------------------------------- solving


def dirichlet_multipliers(disc: Discretization, u: Callable) -> np.ndarray:
    """Local multiplier values (ne, nMl) on Gamma_0 faces encoding u = u_D there.

    The first hybrid equation integrates to gamma = -u on faces, so the data
    enters as minus the L2(F) projection of u_D onto the multiplier basis.
    """
    mesh = disc.mesh
    g = disc.geom
    ne = mesh.n_elements
    out = np.zeros((ne, 3, 2, disc.nE))
    t = disc.erule.points
    for f in range(3):
        on = mesh.face_tags[mesh.element_faces[:, f]] == FaceTag.DIRICHLET
        if not on.any():
            continue
        faces = mesh.faces[mesh.element_faces[on, f]]
        a, b = mesh.vertices[faces[:, 0]], mesh.vertices[faces[:, 1]]
        pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        vals = u(pts)  # (nf, ng, 2)
        mom = np.einsum("g,gq,egm->emq", disc.erule.weights, disc.legendre_edge, vals)
        out[on, f] = -np.sqrt(g.face_length[on, f])[:, None, None] * mom
    return out.reshape(ne, disc.nMl)


@dataclass(eq=False)
class SourceSetup:
    disc: Discretization
    cache: LocalSolverCache
    system: CondensedSystem


def setup(mesh: Mesh, params: MaterialParams, k: int = 1, threads: int | None = None, quad_degree=None) -> SourceSetup:
    if not np.any(mesh.face_tags == FaceTag.DIRICHLET):
        raise SolverError("Gamma_0 is empty: the condensed system is singular")
    disc = Discretization(mesh, k, quad_degree)
    cache = factorize_local(disc, params, threads)
    return SourceSetup(disc, cache, assemble_condensed(cache, threads))


def solve_source(
    mesh: Mesh,
    params: MaterialParams,
    f: Callable | None,
    *,
    k: int = 1,
    dirichlet: Callable | None = None,
    threads: int | None = None,
    prepared: SourceSetup | None = None,
    check: bool = True,
) -> FieldSolution:
    """Solve the hybridized source problem for the load f(x) -> (..., 2)."""
    st = prepared if prepared is not None else setup(mesh, params, k, threads)
    disc = st.disc
    load = disc.load_vector(f) if f is not None else np.zeros((mesh.n_elements, disc.nU))
    return solve_with_load(st, load, params=params, dirichlet=dirichlet, check=check)


def solve_with_load(st: SourceSetup, load: np.ndarray, *, params=None, dirichlet=None, check=True) -> FieldSolution:
    """Condensed solve for element load moments (ne, nU)."""
    system = st.system
    rhs = system.load_vector(load)
    gD = None
    if dirichlet is not None:
        gD = dirichlet_multipliers(st.disc, dirichlet)
        rhs = rhs - st.disc.scatter(np.einsum("emn,en->em", system.a_local, gD))
    gamma = system.solve(rhs)
    if not np.all(np.isfinite(gamma)):
        raise SolverError("condensed solve produced non-finite multipliers")
    sol = recover_fields(system, gamma, load=load, params=params, extra_local=gD, check=check)
    return sol
