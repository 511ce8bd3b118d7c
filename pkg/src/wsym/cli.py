"""Command-line entry point: mesh generation, solves, studies and the check suite."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import studies
from .analysis import field_errors, stability_ratio
from .checks import run_check_suite
from .config import ConfigError, StudyConfig, parse_config
from .eig_driver import solve_eigen
from .hybrid_system import ConsistencyError
from .local_solvers import LocalSolveError
from .mesh import MeshError, generate_structured_alfeld, write_mesh
from .postprocess import PostprocessError, postprocess_local
from .source_driver import SolverError, get_case, setup, solve_with_load

log = logging.getLogger("wsym")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4
EIGEN_COLUMNS = ("index", "lambda_tilde", "lambda_h", "newton_iters", "residual", "min_resolvent_sigma")


def _load_config(args, **extra) -> StudyConfig:
    overrides = {k: v for k, v in extra.items() if v is not None}
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = val.strip()
    if os.environ.get("WSYM_THREADS"):
        overrides["threads"] = os.environ["WSYM_THREADS"]
    return parse_config(args.config, overrides)


def _out_dir(args, cfg: StudyConfig) -> Path:
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    return out


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=float) + "\n")


# ---------------------------------------------------------------- commands


def cmd_mesh_gen(args) -> int:
    gamma1 = frozenset(s for s in (args.gamma1 or "").replace(",", " ").split() if s != "none")
    mesh = generate_structured_alfeld(args.cells, gamma1)
    write_mesh(mesh, args.output)
    print(json.dumps({"path": str(args.output), **mesh.diagnostics()}, default=float))
    return EXIT_OK


def cmd_solve_source(args) -> int:
    cfg = _load_config(args, postprocess="true" if args.postprocess else None)
    out = _out_dir(args, cfg)
    params = cfg.params
    mesh = cfg.build_mesh()
    case = get_case(cfg.case, params)
    st = setup(mesh, params, cfg.k, cfg.threads)
    load = st.disc.load_vector(case.f)
    sol = solve_with_load(st, load, params=params, dirichlet=case.u if case.dirichlet else None)
    post = postprocess_local(sol, params) if cfg.postprocess else None
    summary = {
        "problem": "source",
        "case": cfg.case,
        "k": cfg.k,
        "n_elements": mesh.n_elements,
        "n_dofs": st.system.n_dofs,
        "h": mesh.h_max,
        "residuals": sol.residuals,
        "stability_ratio": stability_ratio(sol, params),
        "errors": field_errors(sol, case, post),
    }
    _write_json(out / "solution.json", summary)
    if args.dump:
        np.savez(out / "coefficients.npz", sigma=sol.sigma, u=sol.u, rho=sol.rho, gamma=sol.gamma)
    print(json.dumps(summary, default=float))
    return EXIT_OK


def cmd_solve_eig(args) -> int:
    cfg = _load_config(args, num_eigs=args.num, postprocess="true" if args.postprocess else None)
    out = _out_dir(args, cfg)
    mesh = cfg.build_mesh()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = solve_eigen(mesh, cfg.params, cfg.num_eigs, k=cfg.k, rtol=cfg.newton_rtol, threads=cfg.threads)
    for w in caught:
        log.warning("%s", w.message)
    with (out / "eigenvalues.csv").open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(EIGEN_COLUMNS)
        for i, r in enumerate(res):
            row = (i, r.lambda_tilde, r.lambda_h, r.iterations, r.residual, r.min_resolvent_sigma)
            wr.writerow([studies.format_cell(v) for v in row])
    summary = {
        "problem": "eigen",
        "k": cfg.k,
        "n_elements": mesh.n_elements,
        "eigenvalues": [
            {"lambda_tilde": r.lambda_tilde, "lambda_h": r.lambda_h, "newton_iters": r.iterations, "flags": r.flags}
            for r in res
        ],
    }
    if cfg.postprocess:
        summary["post_moment_residual"] = [postprocess_local(r.solution, cfg.params).moment_residual() for r in res]
    _write_json(out / "solution.json", summary)
    print((out / "eigenvalues.csv").read_text(), end="")
    return EXIT_OK


def cmd_study(args) -> int:
    cfg = _load_config(args, postprocess="false" if args.no_postprocess else None)
    out = _out_dir(args, cfg)
    if args.kind == "convergence":
        report = studies.run_convergence_study(cfg.problem, cfg.levels, cfg)
        name = f"convergence_{cfg.problem}.csv"
    elif args.kind == "locking":
        report = studies.run_locking_study(cfg.lambda_list, cfg)
        name = "locking.csv"
    else:
        report = studies.run_gap_study(cfg.levels, cfg)
        name = "gap.csv"
    path = studies.write_csv(report, out / name)
    meta = {k: v for k, v in report.meta.items() if k != "extra_columns"}
    _write_json(out / (path.stem + "_meta.json"), meta)
    print(path.read_text(), end="")
    return EXIT_OK


def cmd_check(args) -> int:
    report = run_check_suite()
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "check.json").write_text(text + "\n")
    print(text)
    return EXIT_OK if report["passed"] else EXIT_CHECK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wsym", description="Weakly symmetric mixed elasticity on barycentric-split meshes.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="flat key = value file (defaults when omitted)")
        sp.add_argument("--out", help="output directory (overrides the config key)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    mesh = sub.add_parser("mesh", help="mesh utilities").add_subparsers(dest="action", required=True)
    gen = mesh.add_parser("gen", help="write a structured barycentric-split unit-square mesh")
    gen.add_argument("--cells", type=int, default=4)
    gen.add_argument("--gamma1", default="", help="traction sides: left,right,bottom,top")
    gen.add_argument("--output", "-o", type=Path, required=True)
    gen.set_defaults(func=cmd_mesh_gen)

    solve = sub.add_parser("solve", help="single solves").add_subparsers(dest="problem", required=True)
    src = solve.add_parser("source", help="source problem with a manufactured case")
    common(src)
    src.add_argument("--postprocess", action="store_true")
    src.add_argument("--dump", action="store_true", help="write per-element coefficients (npz)")
    src.set_defaults(func=cmd_solve_source)
    eig = solve.add_parser("eig", help="nonlinear condensed eigenproblem")
    common(eig)
    eig.add_argument("--num", type=int)
    eig.add_argument("--postprocess", action="store_true")
    eig.set_defaults(func=cmd_solve_eig)

    study = sub.add_parser("study", help="convergence, locking and gap studies")
    study.add_argument("kind", choices=("convergence", "locking", "gap"))
    common(study)
    study.add_argument("--no-postprocess", action="store_true")
    study.set_defaults(func=cmd_study)

    chk = sub.add_parser("check", help="run the invariant suite, JSON verdict")
    chk.add_argument("--out")
    chk.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, MeshError, FileNotFoundError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, LocalSolveError, ConsistencyError, PostprocessError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
