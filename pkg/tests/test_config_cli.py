"""Configuration loading, validation and the command-line interface."""

import json
import math
import os
import textwrap

import pytest

from hestonrep.cli import EXIT_CONFIG, EXIT_OK, main
from hestonrep.config import canonical, load_config
from hestonrep.errors import ConfigError
from hestonrep.geometry import BoundaryConditionMode, Rectangle, StoppingRule


BASE_INI = textwrap.dedent("""\
    [params]
    kappa = 2.0
    theta = 0.09
    sigma = 0.6
    rho = -0.3
    r = 0.05
    q = 0.0

    [domain]
    shape = rectangle
    x0 = 0.0
    x1 = 1.0
    y1 = 1.0

    [problem]
    kind = elliptic
    f = constant:0.05
    g = constant:1.0
    growth_c = 2.0

    [mc]
    n_paths = 2000
    dt = 0.005
    seed = 11
    t_max = 30.0
    """)


def write(tmp_path, text, name="cfg.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ---------------------------------------------------------------------------
# Loading and validation
# ---------------------------------------------------------------------------

def test_load_basic_config(tmp_path):
    cfg = load_config(write(tmp_path, BASE_INI))
    assert cfg.kind == "elliptic"
    assert isinstance(cfg.domain.shape, Rectangle)
    assert cfg.mc.n_paths == 2000 and cfg.mc.seed == 11
    assert cfg.rule == StoppingRule.TAU
    assert cfg.mode == BoundaryConditionMode.GAMMA1_ONLY  # beta = 1 here


def test_canonical_round_trip(tmp_path):
    path = write(tmp_path, BASE_INI)
    cfg = load_config(path)
    text = canonical(cfg)
    path2 = write(tmp_path, text, "canon.ini")
    cfg2 = load_config(path2)
    assert canonical(cfg2) == text
    assert cfg2.params == cfg.params
    assert cfg2.mc == cfg.mc


def test_missing_file_and_sections(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.ini"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[params]\nkappa = 1\n"))


def test_bad_values_rejected(tmp_path):
    bad = BASE_INI.replace("kappa = 2.0", "kappa = -2.0")
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, bad))
    bad2 = BASE_INI.replace("kind = elliptic", "kind = hyperbolic")
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, bad2))


def test_parabolic_requires_horizon(tmp_path):
    bad = BASE_INI.replace("kind = elliptic", "kind = parabolic")
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, bad))
    ok = bad.replace("g = constant:1.0", "g = constant:1.0\nt = 1.0")
    cfg = load_config(write(tmp_path, ok, "ok.ini"))
    assert cfg.T == 1.0


def test_obstacle_psi_consistency(tmp_path):
    no_psi = BASE_INI.replace("kind = elliptic", "kind = elliptic_obstacle")
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, no_psi))
    stray_psi = BASE_INI.replace("g = constant:1.0",
                                 "g = constant:1.0\npsi = constant:0.5")
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, stray_psi, "b.ini"))
    good = no_psi.replace("g = constant:1.0",
                          "g = constant:1.0\npsi = constant:0.5")
    cfg = load_config(write(tmp_path, good, "c.ini"))
    assert cfg.data.psi is not None


def test_obstacle_exceeding_boundary_data_rejected(tmp_path):
    bad = BASE_INI.replace("kind = elliptic", "kind = elliptic_obstacle") \
                  .replace("g = constant:1.0", "g = constant:1.0\npsi = constant:2.0")
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, bad))


def test_full_boundary_with_entrance_index_rejected(tmp_path):
    bad = BASE_INI.replace("kind = elliptic",
                           "kind = elliptic\nboundary_mode = full_boundary")
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, bad))


def test_halfplane_domain(tmp_path):
    text = BASE_INI.replace(
        "shape = rectangle\nx0 = 0.0\nx1 = 1.0\ny1 = 1.0", "shape = halfplane")
    cfg = load_config(write(tmp_path, text))
    assert not cfg.domain.has_gamma1


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def test_cli_price_bvp_writes_artifacts(tmp_path, capsys):
    cfg_path = write(tmp_path, BASE_INI)
    out = str(tmp_path / "out")
    rc = main(["price-bvp", "--config", cfg_path, "--out", out,
               "--point", "0,0.5,0.09"])
    assert rc == EXIT_OK
    assert os.path.exists(os.path.join(out, "results.csv"))
    summary = json.load(open(os.path.join(out, "summary.json")))
    (label, entry), = summary.items()
    assert entry["value"] == pytest.approx(1.0, abs=0.01)
    assert "value" in capsys.readouterr().out


def test_cli_rerun_is_byte_identical(tmp_path):
    cfg_path = write(tmp_path, BASE_INI)
    out1, out2 = str(tmp_path / "o1"), str(tmp_path / "o2")
    for out in (out1, out2):
        assert main(["price-bvp", "--config", cfg_path, "--out", out,
                     "--point", "0,0.5,0.09"]) == EXIT_OK
    for name in ("results.csv", "summary.json"):
        b1 = open(os.path.join(out1, name), "rb").read()
        b2 = open(os.path.join(out2, name), "rb").read()
        assert b1 == b2


def test_cli_seed_override_changes_results(tmp_path):
    cfg_path = write(tmp_path, BASE_INI)
    out1, out2 = str(tmp_path / "s1"), str(tmp_path / "s2")
    main(["price-bvp", "--config", cfg_path, "--out", out1, "--point", "0,0.5,0.09"])
    main(["price-bvp", "--config", cfg_path, "--out", out2, "--seed", "99",
          "--point", "0,0.5,0.09"])
    a = open(os.path.join(out1, "results.csv")).read()
    b = open(os.path.join(out2, "results.csv")).read()
    assert a != b


def test_cli_config_error_exit_code(tmp_path):
    rc = main(["price-bvp", "--config", str(tmp_path / "absent.ini")])
    assert rc == EXIT_CONFIG


def test_cli_kind_mismatch_is_config_error(tmp_path):
    cfg_path = write(tmp_path, BASE_INI)
    rc = main(["price-obstacle", "--config", cfg_path,
               "--out", str(tmp_path / "o")])
    assert rc == EXIT_CONFIG


def test_cli_simulate(tmp_path, capsys):
    cfg_path = write(tmp_path, BASE_INI)
    out = str(tmp_path / "sim")
    assert main(["simulate", "--config", cfg_path, "--out", out]) == EXIT_OK
    text = capsys.readouterr().out
    assert "terminal_variance_mean" in text
    summary = json.load(open(os.path.join(out, "summary.json")))
    assert summary["terminal_variance_mean"] == pytest.approx(
        summary["exact_mean"], rel=0.05)


def test_cli_compare_against_oracle(tmp_path, capsys):
    text = BASE_INI + textwrap.dedent("""
        [grid]
        nx = 61
        ny = 31
        x0 = 0.0
        x1 = 1.0
        y1 = 1.0
        edges = dirichlet dirichlet dirichlet
        """)
    cfg_path = write(tmp_path, text)
    out = str(tmp_path / "cmp")
    rc = main(["compare", "--config", cfg_path, "--out", out,
               "--point", "0,0.5,0.5"])
    assert rc == EXIT_OK
    assert os.path.exists(os.path.join(out, "report.xml"))
    assert "PASS" in capsys.readouterr().out
