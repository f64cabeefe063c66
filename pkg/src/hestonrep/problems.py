"""Problem data for the four boundary/obstacle problems, result containers and
a small catalog of built-in data functions.

All data callables take ``(t, x, y)`` with array-valued ``x`` and ``y``;
time-independent (elliptic) problems simply ignore ``t``.  The catalog covers
the payoffs used in tests and from configuration files, so no expression
language is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ParameterError
from .geometry import BoundaryConditionMode, Domain
from .model import GrowthBound, HestonParams, validate_growth

DataFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


def _tag_zero(fn: DataFn, is_zero: bool) -> DataFn:
    fn.is_zero = is_zero  # type: ignore[attr-defined]
    return fn


def constant(c: float) -> DataFn:
    """f(t, x, y) = c."""
    def fn(t, x, y):
        return np.full_like(np.asarray(x, dtype=float), c)
    return _tag_zero(fn, c == 0.0)


def affine(a: float, bx: float = 0.0, by: float = 0.0) -> DataFn:
    """f(t, x, y) = a + bx * x + by * y."""
    def fn(t, x, y):
        return a + bx * np.asarray(x, dtype=float) + by * np.asarray(y, dtype=float)
    return _tag_zero(fn, a == bx == by == 0.0)


def put_payoff(strike: float) -> DataFn:
    """(K - e^x)^+ in the log-price coordinate."""
    def fn(t, x, y):
        return np.maximum(strike - np.exp(np.asarray(x, dtype=float)), 0.0)
    return fn


def call_payoff(strike: float) -> DataFn:
    def fn(t, x, y):
        return np.maximum(np.exp(np.asarray(x, dtype=float)) - strike, 0.0)
    return fn


def down_and_out_put(strike: float, barrier_x: float, ramp_width: float = 0.05) -> DataFn:
    """Down-and-out put payoff with a continuous ramp at the barrier.

    Zero at and below the log-barrier, blending linearly into the put payoff
    over ``ramp_width`` log-units; continuous data only (the discontinuous
    variant is out of scope).
    """
    if ramp_width <= 0.0:
        raise ParameterError("ramp_width must be positive")

    def fn(t, x, y):
        x = np.asarray(x, dtype=float)
        blend = np.clip((x - barrier_x) / ramp_width, 0.0, 1.0)
        return blend * np.maximum(strike - np.exp(x), 0.0)
    return fn


def smooth_bump(center_x: float, center_y: float, width: float, height: float = 1.0) -> DataFn:
    """Smooth Gaussian bump, handy as nontrivial boundary data."""
    def fn(t, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return height * np.exp(-((x - center_x) ** 2 + (y - center_y) ** 2) / (2.0 * width * width))
    return fn


CATALOG = {
    "constant": constant,
    "affine": affine,
    "put": put_payoff,
    "call": call_payoff,
    "down_and_out_put_continuous": down_and_out_put,
    "bump": smooth_bump,
}


def from_spec(spec: str) -> DataFn:
    """Build a catalog function from a string like ``put:100`` or
    ``affine:1,0.5,0``."""
    name, _, argstr = spec.partition(":")
    name = name.strip()
    if name not in CATALOG:
        raise ParameterError(f"unknown catalog function {name!r}")
    args = [float(a) for a in argstr.split(",") if a.strip()] if argstr else []
    return CATALOG[name](*args)


@dataclass(frozen=True)
class ProblemData:
    """Source f, boundary/terminal data g, optional obstacle psi, growth bound."""

    f: DataFn
    g: DataFn
    growth: GrowthBound
    psi: Optional[DataFn] = None

    def validate(self, p: HestonParams, kind: str) -> None:
        validate_growth(self.growth, p, kind)


@dataclass(frozen=True)
class ParabolicProblem:
    domain: Domain
    T: float
    boundary_locus: BoundaryConditionMode = BoundaryConditionMode.GAMMA1_ONLY

    def __post_init__(self):
        if self.T <= 0.0:
            raise ParameterError(f"terminal time must be positive, got {self.T}")


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo estimate with its statistical and truncation diagnostics."""

    mean: float
    std_error: float
    n_paths: int
    bias_bound: float = 0.0
    exit_histogram: dict = field(default_factory=dict)

    @property
    def ci95(self) -> tuple[float, float]:
        return (self.mean - 1.96 * self.std_error, self.mean + 1.96 * self.std_error)


def check_compatibility(
    data: ProblemData,
    sample_points: list[tuple[float, float, float]],
    tol: float = 1e-9,
) -> None:
    """Require psi <= g at sampled boundary points (skipped when no obstacle)."""
    if data.psi is None:
        return
    for (t, x, y) in sample_points:
        xv = np.asarray([x])
        yv = np.asarray([y])
        if float(data.psi(t, xv, yv)[0]) > float(data.g(t, xv, yv)[0]) + tol:
            raise ParameterError(
                f"obstacle exceeds boundary data at (t={t}, x={x}, y={y})"
            )
