import csv
import json

import pytest

from wsym.cli import EXIT_CONFIG, EXIT_OK, main
from wsym.mesh import read_mesh


def test_mesh_gen(tmp_path, capsys):
    out = tmp_path / "m.txt"
    assert main(["mesh", "gen", "--cells", "2", "--gamma1", "right", "-o", str(out)]) == EXIT_OK
    assert read_mesh(out).n_elements == 24
    assert json.loads(capsys.readouterr().out)["n_elements"] == 24


def test_solve_source_writes_outputs(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("mesh = builtin:2\ncase = polynomial\n")
    rc = main(["solve", "source", "--config", str(cfg), "--out", str(tmp_path / "o"), "--postprocess", "--dump"])
    assert rc == EXIT_OK
    data = json.loads((tmp_path / "o" / "solution.json").read_text())
    assert data["errors"]["err_sigma_l2"] < 1e-12
    assert (tmp_path / "o" / "coefficients.npz").exists()
    # the expanded config is echoed and reproduces the run
    assert "case = polynomial" in (tmp_path / "o" / "config.txt").read_text()


def test_solve_eig_csv(tmp_path):
    rc = main(["solve", "eig", "--set", "mesh=builtin:1", "--num", "2", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    rows = list(csv.DictReader((tmp_path / "eigenvalues.csv").open()))
    assert len(rows) == 2
    assert float(rows[0]["lambda_h"]) <= float(rows[1]["lambda_h"])
    assert int(rows[0]["newton_iters"]) <= 5


def test_study_gap_csv(tmp_path):
    rc = main(["study", "gap", "--set", "levels=1,2,4", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    rows = list(csv.DictReader((tmp_path / "gap.csv").open()))
    assert [r["level"] for r in rows] == ["1", "2", "4"]
    assert rows[0]["order_gap"] == "" and float(rows[2]["order_gap"]) > 1.5
    assert json.loads((tmp_path / "gap_meta.json").read_text())["problem"] == "gap"


def test_study_convergence_header(tmp_path):
    rc = main(["study", "convergence", "--set", "levels=1,2", "--no-postprocess", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    header = (tmp_path / "convergence_source.csv").read_text().splitlines()[0].split(",")
    assert header[:10] == ["level", "h", "n_elem", "n_dofs", "err_sigma_l2", "err_rho_l2", "err_u_l2", "err_Pu_1h", "err_post_h1", "err_post_l2"]
    assert "order_err_sigma_l2" in header


@pytest.mark.parametrize(
    "argv",
    [
        ["solve", "source", "--set", "k=3"],
        ["solve", "source", "--set", "lambda_s=-1"],
        ["solve", "source", "--set", "nonsense"],
        ["solve", "source", "--config", "/nonexistent/config.txt"],
    ],
)
def test_config_errors_exit_2(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_threads_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("WSYM_THREADS", "2")
    assert main(["solve", "source", "--set", "mesh=builtin:1", "--out", str(tmp_path)]) == EXIT_OK
    assert "threads = 2" in (tmp_path / "config.txt").read_text()
