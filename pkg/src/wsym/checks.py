"""Cross-module invariant suite with a JSON-ready verdict per check."""
from __future__ import annotations

import logging
import time
import warnings

import numpy as np
import scipy.linalg as la

from .analysis import bdm_interpolant, commuting_residual, divergence_coeffs, l2_norm_vector, stability_ratio
from .discretization import Discretization
from .eig_driver import operator_path, solve_eigen
from .hybrid_system import assemble_full_kkt
from .local_solvers import LocalSolveError
from .material import MaterialParams
from .mesh import FaceTag, generate_structured_alfeld, structured_square
from .source_driver import get_case, setup, solve_with_load

log = logging.getLogger(__name__)

COMMUTING_TOL = 1e-11
POLY_TOL = 1e-12
KKT_TOL = 1e-10
OPERATOR_TOL = 1e-8
RESIDUAL_TOL = 1e-10
SYMMETRY_TOL = 1e-11
Q2L_VARIATION = 2.0
NEGATIVE_GROWTH = 2.0  # per halving of h; h^-2 growth gives 4
POSITIVE_GROWTH = 1.5


def _result(name: str, passed: bool, **values) -> dict:
    return {"name": name, "passed": bool(passed), **{k: _plain(v) for k, v in values.items()}}


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def check_commuting(cells=(1, 2), k: int = 1) -> dict:
    def tau(x):
        s = np.sin(x[..., 0] + 2 * x[..., 1])
        return np.stack([np.stack([s, s], -1), np.stack([s, s], -1)], -2)

    def div_tau(x):
        c = np.cos(x[..., 0] + 2 * x[..., 1])
        return np.stack([3 * c, 3 * c], -1)

    def tau_poly(x):
        a, b = x[..., 0], x[..., 1]
        return np.stack([np.stack([a * a, a * b], -1), np.stack([a * b, b * b], -1)], -2)

    def div_poly(x):
        return 3 * x

    smooth, poly, interp = [], [], []
    for n in cells:
        disc = Discretization(generate_structured_alfeld(n), k)
        smooth.append(commuting_residual(tau, div_tau, disc))
        poly.append(commuting_residual(tau_poly, div_poly, disc))
        c = bdm_interpolant(tau_poly, disc)
        interp.append(l2_norm_vector(disc, disc.eval_stress(c) - tau_poly(disc.xq)))
        # the divergence of the interpolant is the exact divergence for this tau
        d = divergence_coeffs(disc, c)
        poly[-1] = max(poly[-1], l2_norm_vector(disc, disc.eval_displacement(d) - div_poly(disc.xq)))
    ok = max(smooth) <= COMMUTING_TOL and max(poly) <= POLY_TOL and max(interp) <= POLY_TOL
    return _result("commuting_diagram", ok, smooth=smooth, polynomial=poly, reproduction=interp, cells=list(cells))


def check_kkt(cells=(1, 2), ks=(1, 2)) -> dict:
    import scipy.sparse.linalg as spla

    params = MaterialParams()
    errs = []
    for k in ks:
        for n in cells:
            st = setup(generate_structured_alfeld(n), params, k)
            case = get_case("smooth", params)
            load = st.disc.load_vector(case.f)
            sol = solve_with_load(st, load, params=params)
            kkt = assemble_full_kkt(st.cache)
            x = spla.spsolve(kkt.matrix.tocsc(), kkt.rhs(st.cache, load))
            y = kkt.lift(sol)
            errs.append(float(np.abs(x - y).max() / np.abs(x).max()))
    return _result("kkt_equivalence", max(errs) <= KKT_TOL, rel_diff=errs, tol=KKT_TOL)


def check_operator_path(cells=(1, 2), num: int = 3) -> dict:
    params = MaterialParams()
    rel, counts, ok_pos, asym = [], [], True, []
    for n in cells:
        mesh = generate_structured_alfeld(n)
        st = setup(mesh, params, 1)
        op = operator_path(mesh, params, 1, prepared=st)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = solve_eigen(mesh, params, num, prepared=st, recover=False)
        lam = np.array([r.lambda_h for r in res])
        rel.append(float(np.max(np.abs(lam - op.lambdas[:num]) / op.lambdas[:num])))
        ok_pos &= bool(np.all(op.mu > 0))
        counts.append([len(op.mu), mesh.n_elements * st.disc.nU])
        asym.append(op.asymmetry)
    ok = max(rel) <= OPERATOR_TOL and ok_pos and all(a == b for a, b in counts)
    return _result("operator_path", ok, rel_diff=rel, counts=counts, all_positive=ok_pos, asymmetry=asym)


def _face_trace_maxima(sol, blocks) -> dict:
    disc = sol.disc
    mom = np.abs(sol.trace_moments(blocks))
    off = disc.face_dof_offset
    tags = disc.mesh.face_tags
    scale = np.abs(disc.scatter(np.einsum("eis,es->ei", np.abs(blocks.D), np.abs(sol.sigma)))).max()
    out = {}
    for name, tag in (("interior", FaceTag.INTERIOR), ("traction", FaceTag.TRACTION)):
        faces = np.flatnonzero((tags == tag) & (off >= 0))
        idx = (off[faces, None] + np.arange(disc.nMf)[None]).ravel()
        out[name] = float(mom[idx].max(initial=0.0) / scale)
    return out


def check_residuals(cells=(1, 2)) -> dict:
    params = MaterialParams()
    ws, inter, trac = [], [], []
    for n in cells:
        st = setup(generate_structured_alfeld(n, {"right", "top"}), params, 1)
        case = get_case("smooth", params)
        sol = solve_with_load(st, st.disc.load_vector(case.f), params=params)
        ws.append(sol.weak_symmetry_residual(st.cache.blocks))
        t = _face_trace_maxima(sol, st.cache.blocks)
        inter.append(t["interior"])
        trac.append(t["traction"])
    ok = max(ws + inter + trac) <= RESIDUAL_TOL
    return _result("weak_symmetry_and_traces", ok, weak_symmetry=ws, interior_jump=inter, traction=trac)


def check_q2l_scaling(cells=(1, 2, 4)) -> dict:
    params = MaterialParams()
    ratios = []
    for n in cells:
        st = setup(generate_structured_alfeld(n), params, 1)
        h = st.disc.geom.diameter
        ratios.append(float(np.max(st.cache.q2l_norms() / h**2)))
    var = max(ratios) / min(ratios)
    return _result("q2l_scaling", var <= Q2L_VARIATION, max_ratio=ratios, variation=var)


def check_operators(cells=(1, 2)) -> dict:
    params = MaterialParams()
    amin, asym, bsym = [], [], []
    for n in cells:
        st = setup(generate_structured_alfeld(n), params, 1)
        a = st.system.a.toarray()
        asym.append(float(np.abs(a - a.T).max() / np.abs(a).max()))
        la.cholesky(0.5 * (a + a.T))  # raises when not positive definite
        amin.append(float(la.eigvalsh(a, subset_by_index=[0, 0])[0]))
        B = st.system.mass_lambda(30.0).toarray()
        bsym.append(float(np.abs(B - B.T).max() / np.abs(B).max()))
    ok = min(amin) > 0 and max(asym) <= SYMMETRY_TOL and max(bsym) <= SYMMETRY_TOL
    return _result("operators_spd_symmetric", ok, a_min_eig=amin, a_asymmetry=asym, b_asymmetry=bsym)


def check_negative_control(cells=(4, 8), lambda_s: float = 1e6) -> dict:
    """Without the barycentric split the scheme must lose its stability.

    The hybrid matrices stay nonsingular on any triangulation, so the failure
    shows in the discrete H1 stability ratio: for a compressible load at large
    lambda_S it grows like h^-2 on plain meshes and stays bounded on split ones.
    """
    params = MaterialParams(1.0, lambda_s, 1.0)
    case = get_case("smooth", params)
    growth = {}
    for name, gen in (("plain", structured_square), ("split", generate_structured_alfeld)):
        r = []
        for n in cells:
            try:
                st = setup(gen(n), params, 1)
            except LocalSolveError as exc:
                return _result("negative_control", name == "plain", outcome="singular local matrix", detail=str(exc))
            sol = solve_with_load(st, st.disc.load_vector(case.f), params=params)
            r.append(stability_ratio(sol, params))
        growth[name] = r[-1] / r[0]
    ok = growth["plain"] > NEGATIVE_GROWTH and growth["split"] <= POSITIVE_GROWTH
    return _result("negative_control", ok, outcome="stability ratio growth", growth=growth, cells=list(cells))


def check_determinism(cells: int = 16) -> dict:
    params = MaterialParams()
    mesh = generate_structured_alfeld(cells)
    case = get_case("smooth", params)
    out = []
    for t in (1, 4):
        st = setup(mesh, params, 1, threads=t)
        sol = solve_with_load(st, st.disc.load_vector(case.f), params=params)
        out.append((sol.gamma, sol.sigma))
    same = all(np.array_equal(a, b) for a, b in zip(out[0], out[1]))
    return _result("thread_determinism", same, threads=[1, 4], cells=cells)


CHECKS = (
    check_commuting,
    check_kkt,
    check_operator_path,
    check_residuals,
    check_q2l_scaling,
    check_operators,
    check_negative_control,
    check_determinism,
)


def run_check_suite() -> dict:
    """Run every check; failures and exceptions are recorded, never raised."""
    results = []
    for fn in CHECKS:
        t0 = time.perf_counter()
        try:
            r = fn()
        except Exception as exc:  # a crashing check is a failed check
            r = _result(fn.__name__.removeprefix("check_"), False, error=f"{type(exc).__name__}: {exc}")
        r["seconds"] = round(time.perf_counter() - t0, 3)
        log.info("check %s: %s", r["name"], "pass" if r["passed"] else "FAIL")
        results.append(r)
    return {"passed": all(r["passed"] for r in results), "checks": results}
