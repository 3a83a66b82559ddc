import pytest

from brinkfric.config import ConfigError, load_config, parse_config

MINIMAL = """
[params]
nu = 0.1
a = 1
b = 1
alpha = 2
eps = 1e-3
"""


def test_minimal_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.params.nu == 0.1 and cfg.params.eps == 1e-3
    assert cfg.stepping.picard_tol == 1e-10 and cfg.stepping.uzawa_max == 500
    assert (cfg.grid.nx, cfg.grid.ny) == (16, 16)
    assert cfg.output.precision == 17 and not cfg.output.emit_svg
    assert cfg.partition.frictionless


def test_alpha_out_of_range_names_constraint():
    with pytest.raises(ConfigError, match=r"line 6: params.alpha: .*\[1, 2\]"):
        parse_config(MINIMAL.replace("alpha = 2", "alpha = 3"))


def test_duplicate_key_names_both_lines():
    with pytest.raises(ConfigError, match=r"line 8: duplicate key params.nu \(first set on line 3\)"):
        parse_config(MINIMAL + "nu = 0.2\n")


@pytest.mark.parametrize("text,pattern", [
    (MINIMAL + "[bogus]\n", r"unknown section \[bogus\]"),
    (MINIMAL + "zeta = 1\n", r"line 8: unknown key 'zeta'"),
    ("nu = 1\n" + MINIMAL, r"line 1: key outside"),
    (MINIMAL + "garbage\n", r"line 8: expected 'key = value'"),
    (MINIMAL + "[grid\n", r"malformed section"),
    (MINIMAL.replace("eps = 1e-3", "eps = x"), r"line 7: params.eps"),
    (MINIMAL.replace("eps = 1e-3", "eps = 0"), r"params.eps: eps must be > 0"),
    (MINIMAL.replace("eps = 1e-3\n", ""), r"missing required key params.eps"),
    (MINIMAL + "[grid]\nnx = 1\n", r"grid.nx: must be >= 2"),
    (MINIMAL + "[stepping]\ndt = 0.03\nt_end = 0.1\n", r"multiple of dt"),
    (MINIMAL + "[stepping]\ndt = 0.1\nt_end = 0.01\n", r"t_end must be >= dt"),
    (MINIMAL + "[stepping]\npredictor = magic\n", r"stepping.predictor"),
    (MINIMAL + "[init]\npreset = nope\n", r"init.preset"),
    (MINIMAL + "[friction]\ng = -1\n", r"friction.g"),
    (MINIMAL + "[output]\nprecision = 30\n", r"output.precision"),
])
def test_errors(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config(text)


def test_comments_and_pairs():
    cfg = parse_config(MINIMAL + "# note\n; other\n[friction]\ng = 0.2, 0.7   # bottom, top\n")
    assert list(cfg.partition.g_values[:16]) == [0.2] * 16
    assert list(cfg.partition.g_values[16:]) == [0.7] * 16


def test_overrides():
    cfg = parse_config(MINIMAL, {"params.b": "2.5", "grid.nx": "8"})
    assert cfg.params.b == 2.5 and cfg.grid.nx == 8
    with pytest.raises(ConfigError, match="override"):
        parse_config(MINIMAL, {"params.zzz": "1"})


def test_shipped_configs_parse():
    import glob
    import os
    here = os.path.join(os.path.dirname(__file__), "..", "configs")
    paths = sorted(glob.glob(os.path.join(here, "*.cfg")))
    assert paths
    for p in paths:
        load_config(p)
