"""Convergence, locking and initial-guess gap studies, with CSV output."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy.linalg as la

from .analysis import ErrorReport, aitken_orders, field_errors, observed_order, richardson, stability_ratio
from .config import StudyConfig
from .eig_driver import solve_eigen
from .material import MaterialParams
from .overlay import overlay
from .postprocess import PostField, postprocess_local
from .source_driver import get_case, setup, solve_with_load

log = logging.getLogger(__name__)

ERROR_KEYS = ("err_sigma_l2", "err_rho_l2", "err_u_l2", "err_Pu_1h", "err_post_h1", "err_post_l2")
CSV_COLUMNS = ("level", "h", "n_elem", "n_dofs") + ERROR_KEYS + ("lambda_h", "lambda_tilde")


def write_csv(report: ErrorReport, path, columns=CSV_COLUMNS, order_keys=None) -> Path:
    """Write records with order_<key> columns (order from the previous level)."""
    path = Path(path)
    if order_keys is None:
        order_keys = ERROR_KEYS + tuple(report.meta.get("order_keys", ()))
    path.parent.mkdir(parents=True, exist_ok=True)
    extra = [c for c in report.meta.get("extra_columns", []) if c not in columns]
    okeys = [k for k in order_keys if any(not _missing(r.get(k)) for r in report.records)]
    header = list(columns) + extra + [f"order_{k}" for k in okeys]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, rec in enumerate(report.records):
            row = [format_cell(rec.get(c)) for c in list(columns) + extra]
            for key in okeys:
                o = math.nan if i == 0 else observed_order(report.records[i - 1].get(key, math.nan), rec.get(key, math.nan))
                row.append(format_cell(o))
            w.writerow(row)
    return path


def _missing(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def format_cell(v) -> str:
    """CSV text: empty for missing values, round-trip repr for floats."""
    if _missing(v):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ----------------------------------------------------------------- source


def _source_level(cfg: StudyConfig, cells: int, params: MaterialParams, case_name: str) -> dict:
    mesh = cfg.build_mesh(cells)
    case = get_case(case_name, params)
    st = setup(mesh, params, cfg.k, cfg.threads)
    load = st.disc.load_vector(case.f)
    sol = solve_with_load(st, load, params=params, dirichlet=case.u if case.dirichlet else None)
    post = postprocess_local(sol, params) if cfg.postprocess else None
    rec = dict(level=cells, h=mesh.h_max, n_elem=mesh.n_elements, n_dofs=st.system.n_dofs)
    rec.update(field_errors(sol, case, post))
    rec["stability_ratio"] = stability_ratio(sol, params)
    rec["max_residual"] = max(sol.residuals.values())
    return rec


def run_source_convergence(cfg: StudyConfig, levels=None) -> ErrorReport:
    report = ErrorReport(meta={"problem": "source", "case": cfg.case, "k": cfg.k})
    for n in levels or cfg.levels:
        t0 = time.perf_counter()
        rec = _source_level(cfg, n, cfg.params, cfg.case)
        rec["seconds"] = time.perf_counter() - t0
        log.info("source level %d: %s", n, rec)
        report.add(**rec)
    return report


# ------------------------------------------------------------------ eigen


def eigenspace_errors(post_a: list[PostField], post_b: list[PostField], degree: int = 8) -> tuple[float, float]:
    """Distance of span(post_a) from span(post_b), in L2 and broken H1.

    For v in span(a), w is its L2-best approximation from span(b); the returned
    values are sup over ||v||_0 = 1 of ||v - w||_0 and |v - w|_{1,h}.
    """
    ma, mb = post_a[0].disc.mesh, post_b[0].disc.mesh
    ov = overlay(ma, mb, degree)
    Va = np.stack([p.eval_at(ov.elem_a, ov.ref_a) for p in post_a], axis=1)  # (n, ma, 2)
    Vb = np.stack([p.eval_at(ov.elem_b, ov.ref_b) for p in post_b], axis=1)
    Ga = np.stack([p.grads_at(ov.elem_a, ov.ref_a) for p in post_a], axis=1)
    Gb = np.stack([p.grads_at(ov.elem_b, ov.ref_b) for p in post_b], axis=1)
    w = ov.weights
    Gaa = np.einsum("n,nim,njm->ij", w, Va, Va)
    Gbb = np.einsum("n,nim,njm->ij", w, Vb, Vb)
    Gba = np.einsum("n,nim,njm->ij", w, Vb, Va)
    P = np.linalg.solve(Gbb, Gba)  # coefficients of the L2 projection of each a_i
    Dv = Va - np.einsum("ji,njm->nim", P, Vb)
    Dg = Ga - np.einsum("ji,njmk->nimk", P, Gb)
    E0 = np.einsum("n,nim,njm->ij", w, Dv, Dv)
    E1 = np.einsum("n,nimk,njmk->ij", w, Dg, Dg)
    l2 = math.sqrt(max(la.eigh(E0, Gaa, eigvals_only=True)[-1], 0.0))
    h1 = math.sqrt(max(la.eigh(E1, Gaa, eigvals_only=True)[-1], 0.0))
    return l2, h1


def _eigen_level(cfg: StudyConfig, cells: int, params: MaterialParams, num: int, keep_post: bool):
    mesh = cfg.build_mesh(cells)
    st = setup(mesh, params, cfg.k, cfg.threads)
    res = solve_eigen(mesh, params, num, k=cfg.k, rtol=cfg.newton_rtol, prepared=st)
    m = cfg.multiplicity
    cluster = res[:m]
    rec = dict(
        level=cells,
        h=mesh.h_max,
        n_elem=mesh.n_elements,
        n_dofs=st.system.n_dofs,
        lambda_h=float(np.mean([r.lambda_h for r in cluster])),
        lambda_tilde=float(np.mean([r.lambda_tilde for r in cluster])),
        newton_iters=max(r.iterations for r in cluster),
        residual=max(r.residual for r in cluster),
        min_resolvent_sigma=min(r.min_resolvent_sigma for r in cluster),
        cluster_spread=float((cluster[-1].lambda_h - cluster[0].lambda_h) / cluster[0].lambda_h),
    )
    posts = [postprocess_local(r.solution, params) for r in cluster] if keep_post else None
    return rec, res, posts


def run_eigen_convergence(cfg: StudyConfig, levels=None) -> ErrorReport:
    levels = list(levels or cfg.levels)
    if len(levels) < 3:
        raise ValueError("an eigenvalue convergence study needs at least 3 levels")
    num = max(cfg.num_eigs, cfg.multiplicity)
    report = ErrorReport(meta={"problem": "eigen", "k": cfg.k, "multiplicity": cfg.multiplicity})
    posts = []
    for n in levels:
        t0 = time.perf_counter()
        rec, _, post = _eigen_level(cfg, n, cfg.params, num, cfg.postprocess)
        rec["seconds"] = time.perf_counter() - t0
        posts.append(post)
        report.add(**rec)
    lam = report.column("lambda_h")
    p = cfg.k + 2
    ref = richardson(lam[-3:], p)
    report.meta.update(lambda_ref=ref, richardson_order=p, aitken_orders=aitken_orders(lam))
    if len(lam) >= 4:
        report.meta["lambda_ref_previous"] = richardson(lam[-4:-1], p)
    for rec in report.records:
        rec["err_lambda"] = abs(rec["lambda_h"] - ref)
        rec["lambda_ref"] = ref
    if cfg.postprocess:
        for rec, post in zip(report.records[:-1], posts[:-1]):
            rec["err_post_l2"], rec["err_post_h1"] = eigenspace_errors(post, posts[-1])
    report.meta["extra_columns"] = ["err_lambda", "lambda_ref", "newton_iters", "cluster_spread"]
    report.meta["order_keys"] = ["err_lambda"]
    return report


def run_convergence_study(problem: str, levels, cfg: StudyConfig) -> ErrorReport:
    if problem == "source":
        return run_source_convergence(cfg, levels)
    if problem == "eigen":
        return run_eigen_convergence(cfg, levels)
    raise ValueError(f"unknown problem {problem!r}")


# ---------------------------------------------------------------- locking


def run_locking_study(lambda_list, cfg: StudyConfig, cells: int | None = None, with_eigen: bool = True) -> ErrorReport:
    """Fixed mesh, sweep lambda_S with a divergence-free manufactured solution."""
    if cells is None:
        cells = int(cfg.mesh.split(":", 1)[1]) if cfg.mesh.startswith("builtin:") else 8
    case_name = cfg.case if get_case(cfg.case).divergence_free else "divfree"
    report = ErrorReport(meta={"problem": "locking", "case": case_name, "cells": cells})
    for lam_s in lambda_list or cfg.lambda_list:
        params = replace(cfg.params, lambda_s=float(lam_s))
        rec = _source_level(cfg, cells, params, case_name)
        rec["lambda_s"] = float(lam_s)
        if with_eigen:
            erec, _, _ = _eigen_level(cfg, cells, params, max(cfg.multiplicity, 1), False)
            rec["lambda_h"], rec["lambda_tilde"] = erec["lambda_h"], erec["lambda_tilde"]
        report.add(**rec)
    report.meta["extra_columns"] = ["lambda_s", "stability_ratio"]
    return report


# -------------------------------------------------------------------- gap


def run_gap_study(levels, cfg: StudyConfig) -> ErrorReport:
    levels = list(levels or cfg.levels)
    if len(levels) < 3:
        raise ValueError("a gap study needs at least 3 levels")
    report = ErrorReport(meta={"problem": "gap", "k": cfg.k})
    for n in levels:
        mesh = cfg.build_mesh(n)
        st = setup(mesh, cfg.params, cfg.k, cfg.threads)
        r = solve_eigen(mesh, cfg.params, 1, k=cfg.k, rtol=cfg.newton_rtol, prepared=st, recover=False)[0]
        report.add(
            level=n,
            h=mesh.h_max,
            n_elem=mesh.n_elements,
            n_dofs=st.system.n_dofs,
            lambda_h=r.lambda_h,
            lambda_tilde=r.lambda_tilde,
            gap=abs(r.lambda_h - r.lambda_tilde),
            newton_iters=r.iterations,
            residual=r.residual,
        )
    report.meta["extra_columns"] = ["gap", "newton_iters", "residual"]
    report.meta["order_keys"] = ["gap"]
    return report
