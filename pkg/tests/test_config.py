import pytest

from wsym.config import ConfigError, StudyConfig, parse_config, parse_config_text


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("")
    cfg = parse_config(p)
    assert cfg == StudyConfig()
    assert (cfg.k, cfg.mu_s, cfg.lambda_s, cfg.rho_s, cfg.newton_rtol) == (1, 1.0, 1.0, 1.0, 1e-10)
    assert cfg.gamma1 == frozenset()


@pytest.mark.parametrize(
    "text,message",
    [
        ("lambda_s = -1", "lambda_s must be positive"),
        ("lambda_s = inf", "lambda_s must be finite"),
        ("k = 3", "k must be 1 or 2"),
        ("colour = red", "line 1: unknown key 'colour'"),
        ("k = one", "line 1: bad value for k"),
        ("gamma1 = left, right, bottom, top", "Gamma_0 must be nonempty"),
        ("gamma1 = middle", "unknown gamma1 side"),
        ("case = nope", "unknown case"),
        ("# ok\nmesh = builtin:0", "at least one cell"),
        ("levels 2 4", "line 1: expected 'key = value'"),
    ],
)
def test_rejected_configs(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config_text(text)


def test_comments_lists_and_overrides():
    cfg = parse_config_text(
        "k = 2  # quadratic\nlevels = 2, 4, 8\ngamma1 = right top\nlambda_list = 1 1e3\npostprocess = no\n",
        {"threads": "3"},
    )
    assert cfg.k == 2 and cfg.levels == [2, 4, 8] and cfg.threads == 3
    assert cfg.gamma1 == {"right", "top"}
    assert cfg.lambda_list == [1.0, 1e3]
    assert cfg.postprocess is False


def test_text_round_trip():
    cfg = parse_config_text("k = 2\ngamma1 = left\nlambda_s = 1e6\nlevels = 2, 4\n")
    assert parse_config_text(cfg.to_text()) == cfg


def test_builtin_mesh_from_config():
    cfg = parse_config_text("mesh = builtin:3\ngamma1 = top")
    m = cfg.build_mesh()
    assert m.n_elements == 54
    assert cfg.build_mesh(1).n_elements == 6
