"""Command-line front end.

Subcommands: ``simulate`` (path statistics), ``price-bvp`` (Monte Carlo
boundary value problems), ``price-obstacle`` (optimal stopping values),
``oracle-pde`` (finite-difference fields), ``verify`` (the diagnostics
suite) and ``compare`` (Monte Carlo vs oracle tables).

Artifacts go to the output directory: ``results.csv`` and ``summary.json``
are deterministic given config and seed; wall-clock metadata lives in a
separate ``metadata.json`` sidecar so result files stay byte-identical
across reruns.  Exit codes: 0 success, 1 failed statistical tests or
comparisons, 2 configuration errors, 3 numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from xml.etree import ElementTree as ET

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config, canonical
from .errors import ConfigError, HestonRepError
from .geometry import Domain, Rectangle, StoppingRule, BoundaryConditionMode
from .model import feller_indices, hitting_probability, expected_exit_time
from .problems import ParabolicProblem, Estimate
from .estimators import (
    MCSettings, estimate_elliptic_bvp, estimate_parabolic_bvp,
)
from .stopping import TimeSlabGrid, value_obstacle_parabolic, value_obstacle_elliptic
from .sde import Scheme, simulate_cir_marginal, cir_mean, cir_variance
from .rng import substream
from . import pde as pde_mod
from . import diagnostics as dg

EXIT_OK = 0
EXIT_TEST_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_metadata(out_dir: str, args) -> None:
    _write_json(os.path.join(out_dir, "metadata.json"), {
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "version": __version__,
        "command": " ".join(sys.argv[1:]),
    })


def _write_junit(path: str, suite: str, cases: list[tuple[str, bool, str]]) -> None:
    root = ET.Element("testsuite", name=suite,
                      tests=str(len(cases)),
                      failures=str(sum(1 for _, ok, _ in cases if not ok)))
    for name, ok, detail in cases:
        tc = ET.SubElement(root, "testcase", name=name)
        if not ok:
            f = ET.SubElement(tc, "failure", message=detail)
            f.text = detail
    ET.ElementTree(root).write(path, encoding="unicode", xml_declaration=True)


def _points(cfg: ExperimentConfig, arg_points: list[str]) -> list[tuple[float, float, float]]:
    if arg_points:
        pts = []
        for sp in arg_points:
            parts = [float(v) for v in sp.split(",")]
            if len(parts) != 3:
                raise ConfigError(f"--point needs 't,x,y', got {sp!r}")
            pts.append(tuple(parts))
        return pts
    # default: one representative interior point
    s = cfg.domain.shape
    if isinstance(s, Rectangle):
        y1 = s.y1 if math.isfinite(s.y1) else 1.0
        return [(0.0, 0.5 * (s.x0 + s.x1), 0.5 * y1)]
    return [(0.0, 0.0, cfg.params.theta)]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    p = cfg.params
    T = cfg.T if cfg.T is not None else 1.0
    n_steps = max(1, int(round(T / cfg.mc.dt)))
    rng = substream(cfg.mc.seed, 0)
    y = simulate_cir_marginal(p, p.theta, T, n_steps, cfg.mc.n_paths, cfg.mc.scheme, rng)
    rows = [
        ["terminal_variance_mean", float(np.mean(y))],
        ["terminal_variance_var", float(np.var(y, ddof=1))],
        ["exact_mean", cir_mean(p, p.theta, T)],
        ["exact_var", cir_variance(p, p.theta, T)],
    ]
    _write_csv(os.path.join(cfg.out_dir, "results.csv"), ["quantity", "value"], rows)
    _write_json(os.path.join(cfg.out_dir, "summary.json"),
                {k: v for k, v in rows})
    for k, v in rows:
        print(f"{k} = {v:.6g}")
    return EXIT_OK


def _price_point(cfg: ExperimentConfig, t: float, x: float, y: float) -> Estimate:
    p = cfg.params
    if cfg.kind == "elliptic":
        return estimate_elliptic_bvp(p, (x, y), cfg.data, cfg.domain, cfg.rule, cfg.mc)
    prob = ParabolicProblem(domain=cfg.domain, T=cfg.T, boundary_locus=cfg.mode)
    return estimate_parabolic_bvp(p, t, (x, y), cfg.data, prob, cfg.rule, cfg.mc)


def cmd_price_bvp(cfg: ExperimentConfig, args) -> int:
    if cfg.kind not in ("elliptic", "parabolic"):
        raise ConfigError(f"price-bvp expects a bvp problem kind, got {cfg.kind}")
    rows = []
    summary = {}
    for (t, x, y) in _points(cfg, args.point):
        est = _price_point(cfg, t, x, y)
        label = f"t={t:g},x={x:g},y={y:g}"
        rows.append([label, est.mean, est.std_error, est.bias_bound])
        summary[label] = {"value": est.mean, "std_error": est.std_error,
                          "bias_bound": est.bias_bound}
        print(f"{label}: value = {est.mean:.6g} +- {est.std_error:.2g}")
    _write_csv(os.path.join(cfg.out_dir, "results.csv"),
               ["point", "value", "std_error", "bias_bound"], rows)
    _write_json(os.path.join(cfg.out_dir, "summary.json"), summary)
    return EXIT_OK


def cmd_price_obstacle(cfg: ExperimentConfig, args) -> int:
    if not cfg.kind.endswith("obstacle"):
        raise ConfigError(f"price-obstacle expects an obstacle kind, got {cfg.kind}")
    p = cfg.params
    rows = []
    summary = {}
    for (t, x, y) in _points(cfg, args.point):
        if cfg.kind == "parabolic_obstacle":
            prob = ParabolicProblem(domain=cfg.domain, T=cfg.T, boundary_locus=cfg.mode)
            grid = TimeSlabGrid(T=cfg.T - t, n_slabs=cfg.n_slabs)
            val = value_obstacle_parabolic(p, t, (x, y), cfg.data, prob, cfg.mc,
                                           grid, cfg.rule)
        else:
            val = value_obstacle_elliptic(p, (x, y), cfg.data, cfg.domain,
                                          cfg.rule, cfg.mc)
        label = f"t={t:g},x={x:g},y={y:g}"
        rows.append([label, val.low.mean, val.low.std_error,
                     val.high.mean, val.high.std_error])
        summary[label] = {"low": val.low.mean, "high": val.high.mean,
                          "low_se": val.low.std_error, "high_se": val.high.std_error}
        print(f"{label}: value in [{val.low.mean:.6g}, {val.high.mean:.6g}]"
              f" (se {val.low.std_error:.2g}/{val.high.std_error:.2g})")
    _write_csv(os.path.join(cfg.out_dir, "results.csv"),
               ["point", "low", "low_se", "high", "high_se"], rows)
    _write_json(os.path.join(cfg.out_dir, "summary.json"), summary)
    return EXIT_OK


def _oracle_field(cfg: ExperimentConfig):
    if cfg.grid is None:
        raise ConfigError("oracle operations need a [grid] section")
    g = cfg.grid
    grid = pde_mod.Grid2D(nx=g.nx, ny=g.ny, x0=g.x0, x1=g.x1, y0=g.y0, y1=g.y1)
    edges = pde_mod.EdgeConditions(*g.edges)
    p = cfg.params
    if cfg.kind == "elliptic":
        return grid, pde_mod.solve_elliptic(grid, p, cfg.data, cfg.mode, edges)
    if cfg.kind == "parabolic":
        res = pde_mod.solve_parabolic(grid, p, cfg.data, cfg.T, cfg.mode,
                                      g.n_steps, edges=edges)
        return grid, res.at(0.0)
    if cfg.kind == "elliptic_obstacle":
        return grid, pde_mod.solve_obstacle_elliptic(grid, p, cfg.data, cfg.mode, edges).field
    res = pde_mod.solve_obstacle_parabolic(grid, p, cfg.data, cfg.T, cfg.mode,
                                           g.n_steps, edges=edges)
    return grid, res.field


def cmd_oracle_pde(cfg: ExperimentConfig, args) -> int:
    grid, field = _oracle_field(cfg)
    rows = []
    xs, ys = grid.xs, grid.ys
    for j in range(grid.ny):
        for i in range(grid.nx):
            rows.append([float(xs[i]), float(ys[j]), float(field[j, i])])
    _write_csv(os.path.join(cfg.out_dir, "results.csv"), ["x", "y", "value"], rows)
    _write_json(os.path.join(cfg.out_dir, "summary.json"), {
        "nx": grid.nx, "ny": grid.ny,
        "x_range": [grid.x0, grid.x1], "y_range": [grid.y0, grid.y1],
        "min": float(field.min()), "max": float(field.max()),
    })
    print(f"field {grid.nx}x{grid.ny}: min {field.min():.6g} max {field.max():.6g}")
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, args) -> int:
    p = cfg.params
    idx = feller_indices(p)
    n = min(cfg.mc.n_paths, 50000)
    seed = cfg.mc.seed
    reports = [
        dg.supermartingale_test_X(p, 0.0, [0.5, 1.0], n, seed),
        dg.supermartingale_test_X(p, 0.5, [0.25, 0.5, 1.0], n, seed),
        dg.supermartingale_test_X(p, 1.0, [0.25, 0.5, 1.0], n, seed),
        dg.supermartingale_test_Y(p, idx.mu / 2.0, [0.25, 0.5, 1.0], n, seed),
        dg.supermartingale_test_Y(p, idx.mu, [0.05, 0.1, 0.2], n, seed,
                                  two_sided=True),
        dg.boundary_hit_stats(p, [0.1, 0.05], cfg.mc.scheme, [1e-2, 1e-3], n, seed),
        dg.occupation_time_zero_test(p, p.theta, 0.5, [1e-2, 1e-3], min(n, 5000), seed),
    ]
    neg = dg.supermartingale_test_Y(p, 2.0 * idx.mu, [0.02, 0.04, 0.08], n, seed,
                                    expect_fail=True)
    cases = [(r.name, r.passed, f"statistic {r.statistic:.4g} vs {r.threshold:.4g}")
             for r in reports]
    cases.append((neg.name + " [negative control]", not neg.passed,
                  f"statistic {neg.statistic:.4g} should exceed {neg.threshold:.4g}"))
    rows = [[name, int(ok), detail] for name, ok, detail in cases]
    _write_csv(os.path.join(cfg.out_dir, "results.csv"),
               ["test", "passed", "detail"], rows)
    _write_junit(os.path.join(cfg.out_dir, "report.xml"), "diagnostics", cases)
    _write_json(os.path.join(cfg.out_dir, "summary.json"),
                {name: ok for name, ok, _ in cases})
    all_ok = all(ok for _, ok, _ in cases)
    for name, ok, _ in cases:
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if all_ok else EXIT_TEST_FAILURE


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    if cfg.kind not in ("elliptic", "parabolic"):
        raise ConfigError(f"compare supports bvp kinds, got {cfg.kind}")
    grid, field = _oracle_field(cfg)
    from scipy.interpolate import RegularGridInterpolator
    itp = RegularGridInterpolator((grid.ys, grid.xs), field)
    entries = []
    for (t, x, y) in _points(cfg, args.point):
        est = _price_point(cfg, t, x, y)
        oracle = float(itp([[y, x]])[0])
        tol = args.tolerance * max(abs(oracle), 1.0)
        entries.append((f"t={t:g},x={x:g},y={y:g}", est, oracle, tol))
    report = dg.mc_vs_pde(entries)
    rows = []
    for row in report.rows:
        rows.append([row.label, row.mc_value, row.mc_std_error, row.oracle_value,
                     row.z_score, int(row.passed)])
        print(f"{'PASS' if row.passed else 'FAIL'} {row.label}: "
              f"mc {row.mc_value:.6g} vs oracle {row.oracle_value:.6g} "
              f"(z = {row.z_score:.2f})")
    _write_csv(os.path.join(cfg.out_dir, "results.csv"),
               ["point", "mc", "mc_se", "oracle", "z", "passed"], rows)
    _write_json(os.path.join(cfg.out_dir, "summary.json"),
                {r.label: r.passed for r in report.rows})
    _write_junit(os.path.join(cfg.out_dir, "report.xml"), "compare",
                 [(r.label, r.passed, f"z = {r.z_score:.3g}") for r in report.rows])
    return EXIT_OK if report.all_passed else EXIT_TEST_FAILURE


COMMANDS = {
    "simulate": cmd_simulate,
    "price-bvp": cmd_price_bvp,
    "price-obstacle": cmd_price_obstacle,
    "oracle-pde": cmd_oracle_pde,
    "verify": cmd_verify,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hestonrep",
                                 description="Monte Carlo and PDE solvers for "
                                             "degenerate boundary value and "
                                             "obstacle problems")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="path to the INI config file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--workers", type=int, default=1,
                        help="worker count (no effect on results)")
        sp.add_argument("--out", default=None, help="override the output directory")
        sp.add_argument("--point", action="append", default=[],
                        help="evaluation point 't,x,y' (repeatable)")
        if name == "compare":
            sp.add_argument("--tolerance", type=float, default=0.01,
                            help="relative tolerance on top of 3 sigma")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = _override_seed(cfg, args.seed)
        if args.out is not None:
            cfg = _override_out(cfg, args.out)
        os.makedirs(cfg.out_dir, exist_ok=True)
        _write_metadata(cfg.out_dir, args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HestonRepError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def _override_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    import dataclasses
    mc = dataclasses.replace(cfg.mc, seed=seed)
    return dataclasses.replace(cfg, mc=mc)


def _override_out(cfg: ExperimentConfig, out: str) -> ExperimentConfig:
    import dataclasses
    return dataclasses.replace(cfg, out_dir=out)


if __name__ == "__main__":
    sys.exit(main())
