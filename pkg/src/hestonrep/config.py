"""Experiment configuration: INI-style files parsed into validated objects.

A config file holds the model parameters, the domain, the problem data
(catalog payoff specs), Monte Carlo settings, an optional oracle grid and
output paths.  Loading cross-validates everything that can be checked
statically: parameter ranges, growth-bound admissibility for the problem
kind, boundary-mode consistency with the Feller index, and obstacle
compatibility sampled on the boundary.  ``canonical()`` re-serializes a
loaded config in a normalized form, so round-tripping is total.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError, ParameterError, GrowthViolation
from .geometry import (
    BoundaryConditionMode, Domain, HalfPlane, Rectangle, StoppingRule,
    default_boundary_mode,
)
from .model import GrowthBound, HestonParams, feller_indices
from .problems import ProblemData, from_spec, check_compatibility
from .sde import Scheme
from .estimators import MCSettings

PROBLEM_KINDS = ("elliptic", "parabolic", "elliptic_obstacle", "parabolic_obstacle")


@dataclass(frozen=True)
class GridSettings:
    nx: int
    ny: int
    x0: float
    x1: float
    y0: float
    y1: float
    n_steps: int = 100
    edges: tuple[str, str, str] = ("dirichlet", "dirichlet", "dirichlet")


@dataclass(frozen=True)
class ExperimentConfig:
    params: HestonParams
    domain: Domain
    kind: str
    data: ProblemData
    mc: MCSettings
    rule: StoppingRule
    mode: BoundaryConditionMode
    T: Optional[float] = None
    n_slabs: int = 20
    grid: Optional[GridSettings] = None
    out_dir: str = "out"
    raw: dict = field(default_factory=dict, compare=False)


def _get(cp: configparser.ConfigParser, section: str, key: str, cast, default=None):
    if not cp.has_option(section, key):
        if default is not None or cp.has_section(section):
            return default
        raise ConfigError(f"missing [{section}] {key}")
    try:
        return cast(cp.get(section, key))
    except ValueError as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {exc}") from exc


def _require(cp, section: str, key: str, cast):
    if not cp.has_option(section, key):
        raise ConfigError(f"missing [{section}] {key}")
    try:
        return cast(cp.get(section, key))
    except ValueError as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {exc}") from exc


def load_config(path: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    try:
        return _build(cp)
    except (ParameterError, GrowthViolation) as exc:
        raise ConfigError(str(exc)) from exc


def _build(cp: configparser.ConfigParser) -> ExperimentConfig:
    for sec in ("params", "domain", "problem", "mc"):
        if not cp.has_section(sec):
            raise ConfigError(f"missing section [{sec}]")

    params = HestonParams(
        kappa=_require(cp, "params", "kappa", float),
        theta=_require(cp, "params", "theta", float),
        sigma=_require(cp, "params", "sigma", float),
        rho=_require(cp, "params", "rho", float),
        r=_require(cp, "params", "r", float),
        q=_get(cp, "params", "q", float, 0.0),
    )

    shape_name = _require(cp, "domain", "shape", str).strip().lower()
    if shape_name == "halfplane":
        domain = Domain(HalfPlane())
    elif shape_name == "rectangle":
        domain = Domain(Rectangle(
            x0=_require(cp, "domain", "x0", float),
            x1=_require(cp, "domain", "x1", float),
            y1=_get(cp, "domain", "y1", float, math.inf),
        ))
    else:
        raise ConfigError(f"unknown domain shape {shape_name!r}")

    kind = _require(cp, "problem", "kind", str).strip().lower()
    if kind not in PROBLEM_KINDS:
        raise ConfigError(f"unknown problem kind {kind!r}; expected one of {PROBLEM_KINDS}")

    growth = GrowthBound(
        C=_get(cp, "problem", "growth_c", float, 1.0),
        M1=_get(cp, "problem", "growth_m1", float, 0.0),
        M2=_get(cp, "problem", "growth_m2", float, 0.0),
    )
    psi_spec = _get(cp, "problem", "psi", str, None)
    data = ProblemData(
        f=from_spec(_require(cp, "problem", "f", str)),
        g=from_spec(_require(cp, "problem", "g", str)),
        growth=growth,
        psi=from_spec(psi_spec) if psi_spec else None,
    )
    base_kind = "parabolic" if kind.startswith("parabolic") else "elliptic"
    data.validate(params, base_kind)

    T = _get(cp, "problem", "t", float, None)
    if base_kind == "parabolic":
        if T is None or T <= 0.0:
            raise ConfigError("parabolic problems need a positive [problem] T")
    if kind.endswith("obstacle") and data.psi is None:
        raise ConfigError("obstacle problems need [problem] psi")
    if not kind.endswith("obstacle") and data.psi is not None:
        raise ConfigError("psi given for a problem without an obstacle")

    idx = feller_indices(params)
    rule_name = _get(cp, "problem", "stopping_rule", str, "tau").strip().lower()
    try:
        rule = StoppingRule(rule_name)
    except ValueError:
        raise ConfigError(f"unknown stopping rule {rule_name!r}")
    mode_name = _get(cp, "problem", "boundary_mode", str, None)
    if mode_name is None:
        mode = default_boundary_mode(idx)
    else:
        try:
            mode = BoundaryConditionMode(mode_name.strip().lower())
        except ValueError:
            raise ConfigError(f"unknown boundary mode {mode_name!r}")
        if mode == BoundaryConditionMode.FULL_BOUNDARY and idx.beta >= 1.0:
            raise ConfigError(
                f"full-boundary data with beta={idx.beta:.3g} >= 1: the degenerate "
                "line is an entrance boundary and carries no data")

    if data.psi is not None:
        pts = _boundary_samples(domain, T if T is not None else 0.0)
        check_compatibility(data, pts)

    scheme_name = _get(cp, "mc", "scheme", str, "full_truncation").strip().lower()
    try:
        scheme = Scheme(scheme_name)
    except ValueError:
        raise ConfigError(f"unknown scheme {scheme_name!r}")
    mc = MCSettings(
        n_paths=_require(cp, "mc", "n_paths", int),
        dt=_require(cp, "mc", "dt", float),
        seed=_get(cp, "mc", "seed", int, 0),
        scheme=scheme,
        t_max=_get(cp, "mc", "t_max", float, None),
        chunk_size=_get(cp, "mc", "chunk_size", int, 1 << 17),
    )

    grid = None
    if cp.has_section("grid"):
        edges_raw = _get(cp, "grid", "edges", str, "dirichlet dirichlet dirichlet")
        edges = tuple(edges_raw.split())
        if len(edges) != 3:
            raise ConfigError("grid edges must name left right top conditions")
        grid = GridSettings(
            nx=_require(cp, "grid", "nx", int),
            ny=_require(cp, "grid", "ny", int),
            x0=_require(cp, "grid", "x0", float),
            x1=_require(cp, "grid", "x1", float),
            y0=_get(cp, "grid", "y0", float, 0.0),
            y1=_require(cp, "grid", "y1", float),
            n_steps=_get(cp, "grid", "n_steps", int, 100),
            edges=edges,
        )

    return ExperimentConfig(
        params=params,
        domain=domain,
        kind=kind,
        data=data,
        mc=mc,
        rule=rule,
        mode=mode,
        T=T,
        n_slabs=_get(cp, "problem", "n_slabs", int, 20) if cp.has_section("problem") else 20,
        grid=grid,
        out_dir=_get(cp, "output", "out_dir", str, "out") if cp.has_section("output") else "out",
        raw={s: dict(cp.items(s)) for s in cp.sections()},
    )


def _boundary_samples(domain: Domain, T: float) -> list[tuple[float, float, float]]:
    """A few points on the accessible boundary for the psi <= g check."""
    s = domain.shape
    pts: list[tuple[float, float, float]] = []
    times = [0.0, T] if T > 0.0 else [0.0]
    if isinstance(s, Rectangle):
        ys = [0.25 * s.y1, 0.5 * s.y1] if math.isfinite(s.y1) else [0.1, 1.0]
        for t in times:
            for y in ys:
                pts.append((t, s.x0, y))
                pts.append((t, s.x1, y))
    for t in times:
        pts.append((t, 0.0, 0.0))
    return pts


def canonical(cfg: ExperimentConfig) -> str:
    """Normalized INI serialization of the loaded configuration."""
    cp = configparser.ConfigParser()
    cp["params"] = {
        "kappa": repr(cfg.params.kappa), "theta": repr(cfg.params.theta),
        "sigma": repr(cfg.params.sigma), "rho": repr(cfg.params.rho),
        "r": repr(cfg.params.r), "q": repr(cfg.params.q),
    }
    s = cfg.domain.shape
    if isinstance(s, HalfPlane):
        cp["domain"] = {"shape": "halfplane"}
    else:
        cp["domain"] = {"shape": "rectangle", "x0": repr(s.x0), "x1": repr(s.x1),
                        "y1": repr(s.y1)}
    prob = dict(cfg.raw.get("problem", {}))
    prob["kind"] = cfg.kind
    prob["stopping_rule"] = cfg.rule.value
    prob["boundary_mode"] = cfg.mode.value
    cp["problem"] = {k: str(v) for k, v in sorted(prob.items())}
    cp["mc"] = {
        "n_paths": str(cfg.mc.n_paths), "dt": repr(cfg.mc.dt),
        "seed": str(cfg.mc.seed), "scheme": cfg.mc.scheme.value,
        "chunk_size": str(cfg.mc.chunk_size),
    }
    if cfg.mc.t_max is not None:
        cp["mc"]["t_max"] = repr(cfg.mc.t_max)
    if cfg.grid is not None:
        g = cfg.grid
        cp["grid"] = {"nx": str(g.nx), "ny": str(g.ny), "x0": repr(g.x0),
                      "x1": repr(g.x1), "y0": repr(g.y0), "y1": repr(g.y1),
                      "n_steps": str(g.n_steps), "edges": " ".join(g.edges)}
    cp["output"] = {"out_dir": cfg.out_dir}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
