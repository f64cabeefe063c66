"""Path simulation for the CIR variance process and the full Heston diffusion.

Three variance discretizations are provided:

* ``FULL_TRUNCATION`` — Euler step with the diffusion argument clipped at
  zero and the result truncated to be nonnegative; robust near the boundary.
* ``REFLECTED`` — the reflected-coefficient Euler step: raw drift, diffusion
  multiplied by an indicator of nonnegativity; internal values may dip below
  zero and are pushed back by the drift.
* ``EXACT_CIR_MARGINAL`` — one-step sampling from the exact CIR transition
  law (a scaled noncentral chi-square with 2 beta degrees of freedom); the
  reference scheme for boundary-sensitive diagnostics.

Scalar stepping works on :class:`PathState`; the array variants underneath
are shared with the Monte Carlo estimators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import ParameterError, StepCapExceeded
from .model import HestonParams, feller_indices
from .rng import path_stream

DEFAULT_STEP_CAP = 10_000_000


class Scheme(Enum):
    FULL_TRUNCATION = "full_truncation"
    REFLECTED = "reflected"
    EXACT_CIR_MARGINAL = "exact_cir_marginal"


@dataclass(frozen=True)
class PathConfig:
    dt: float
    horizon: float
    scheme: Scheme = Scheme.FULL_TRUNCATION
    seed: int = 0
    path_index: int = 0
    step_cap: int = DEFAULT_STEP_CAP

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ParameterError(f"dt must be positive, got {self.dt}")
        if self.horizon < 0.0:
            raise ParameterError(f"horizon must be nonnegative, got {self.horizon}")
        if self.horizon / self.dt > self.step_cap:
            raise StepCapExceeded(
                f"horizon/dt = {self.horizon / self.dt:.3g} exceeds step cap {self.step_cap}"
            )


@dataclass(frozen=True)
class PathState:
    t: float
    x: float
    y: float


@dataclass(frozen=True)
class BrownianIncrement:
    """A pair of independent N(0, dt) draws from the path's stream."""

    dw1: float
    dw2: float


def ncx2_transition(p: HestonParams, y, dt: float, rng: np.random.Generator):
    """Draw Y(t + dt) | Y(t) = y from the exact CIR transition law.

    The conditional law is c * chi'^2(df, lam) with df = 4 kappa theta /
    sigma^2 = 2 beta, lam = y e^{-kappa dt} / c and c = sigma^2
    (1 - e^{-kappa dt}) / (4 kappa).  The sampler decomposes into a
    chi-square plus squared normal for df > 1 and a Poisson mixture of
    gammas otherwise (the regime split inside the generator's
    ``noncentral_chisquare``).
    """
    ekt = math.exp(-p.kappa * dt)
    c = p.sigma * p.sigma * (1.0 - ekt) / (4.0 * p.kappa)
    df = 4.0 * p.kappa * p.theta / (p.sigma * p.sigma)
    lam = np.asarray(y) * (ekt / c)
    return c * rng.noncentral_chisquare(df, lam)


def cir_step(
    p: HestonParams,
    y: float,
    dw: float,
    dt: float,
    scheme: Scheme = Scheme.FULL_TRUNCATION,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Advance the variance by one step; returns the new y.

    ``dw`` is the Brownian increment driving the variance (ignored by the
    exact scheme, which needs ``rng`` instead).
    """
    if scheme == Scheme.EXACT_CIR_MARGINAL:
        if rng is None:
            raise ParameterError("exact CIR sampling requires a generator")
        if y < 0.0:
            raise ParameterError(f"exact scheme requires y >= 0, got {y}")
        return float(ncx2_transition(p, y, dt, rng))
    if scheme == Scheme.FULL_TRUNCATION:
        if y < 0.0:
            raise ParameterError(f"full truncation requires y >= 0, got {y}")
        yp = max(y, 0.0)
        ynew = y + p.kappa * (p.theta - y) * dt + p.sigma * math.sqrt(yp) * dw
        return max(ynew, 0.0)
    if scheme == Scheme.REFLECTED:
        diff = p.sigma * math.sqrt(max(y, 0.0)) if y >= 0.0 else 0.0
        return y + p.kappa * (p.theta - y) * dt + diff * dw
    raise ParameterError(f"unknown scheme {scheme}")


def heston_step(
    p: HestonParams,
    state: PathState,
    inc: BrownianIncrement,
    dt: float,
    scheme: Scheme = Scheme.FULL_TRUNCATION,
    rng: Optional[np.random.Generator] = None,
) -> PathState:
    """One Euler step of the full (X, Y) dynamics."""
    y = state.y
    x_new = state.x + (p.r - p.q - 0.5 * y) * dt + math.sqrt(max(y, 0.0)) * inc.dw1
    dw_y = p.rho * inc.dw1 + math.sqrt(1.0 - p.rho * p.rho) * inc.dw2
    y_new = cir_step(p, y, dw_y, dt, scheme=scheme, rng=rng)
    return PathState(t=state.t + dt, x=x_new, y=y_new)


@dataclass
class PathTrace:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray


Observer = Callable[[int, PathState, PathState], bool]


def simulate_path(
    p: HestonParams,
    start: PathState,
    cfg: PathConfig,
    observer: Optional[Observer] = None,
) -> PathTrace:
    """Simulate one path on its dedicated random stream.

    The observer is called after each step with (step_index, pre, post) and
    may return True to request a stop.  Identical (seed, path_index) produce
    bit-identical traces regardless of how many other paths run concurrently.
    """
    if start.y < 0.0:
        raise ParameterError(f"start must lie in the closed half-plane, got y={start.y}")
    rng = path_stream(cfg.seed, cfg.path_index)
    n_steps = int(round(cfg.horizon / cfg.dt))
    if n_steps > cfg.step_cap:
        raise StepCapExceeded(f"{n_steps} steps exceed cap {cfg.step_cap}")
    ts = [start.t]
    xs = [start.x]
    ys = [start.y]
    state = start
    sqdt = math.sqrt(cfg.dt)
    for k in range(n_steps):
        z = rng.standard_normal(2)
        inc = BrownianIncrement(dw1=z[0] * sqdt, dw2=z[1] * sqdt)
        new = heston_step(p, state, inc, cfg.dt, scheme=cfg.scheme, rng=rng)
        ts.append(new.t)
        xs.append(new.x)
        ys.append(new.y)
        stop = observer(k, state, new) if observer is not None else False
        state = new
        if stop:
            break
    return PathTrace(t=np.array(ts), x=np.array(xs), y=np.array(ys))


# ---------------------------------------------------------------------------
# Array kernels shared with the estimators
# ---------------------------------------------------------------------------

def cir_step_arrays(
    p: HestonParams,
    y: np.ndarray,
    dw: np.ndarray,
    dt: float,
    scheme: Scheme,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized variance step; returns (y_raw, y_clipped).

    ``y_raw`` is the pre-truncation value (used for zero-hit detection and
    Gamma0 crossing), ``y_clipped`` the state carried forward.
    """
    if scheme == Scheme.FULL_TRUNCATION:
        yp = np.maximum(y, 0.0)
        y_raw = y + p.kappa * (p.theta - y) * dt + p.sigma * np.sqrt(yp) * dw
        return y_raw, np.maximum(y_raw, 0.0)
    if scheme == Scheme.REFLECTED:
        diff = np.where(y >= 0.0, p.sigma * np.sqrt(np.maximum(y, 0.0)), 0.0)
        y_raw = y + p.kappa * (p.theta - y) * dt + diff * dw
        return y_raw, y_raw
    if scheme == Scheme.EXACT_CIR_MARGINAL:
        if rng is None:
            raise ParameterError("exact CIR sampling requires a generator")
        y_new = ncx2_transition(p, np.maximum(y, 0.0), dt, rng)
        return y_new, y_new
    raise ParameterError(f"unknown scheme {scheme}")


def heston_step_arrays(
    p: HestonParams,
    x: np.ndarray,
    y: np.ndarray,
    z1: np.ndarray,
    z2: np.ndarray,
    dt: float,
    scheme: Scheme,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized (X, Y) step from standard normals; returns (x', y_raw, y')."""
    sqdt = math.sqrt(dt)
    dw1 = z1 * sqdt
    dw_y = (p.rho * z1 + math.sqrt(1.0 - p.rho * p.rho) * z2) * sqdt
    x_new = x + (p.r - p.q - 0.5 * y) * dt + np.sqrt(np.maximum(y, 0.0)) * dw1
    y_raw, y_new = cir_step_arrays(p, y, dw_y, dt, scheme, rng=rng)
    return x_new, y_raw, y_new


def simulate_cir_marginal(
    p: HestonParams,
    y0: float,
    t: float,
    n_steps: int,
    n_paths: int,
    scheme: Scheme,
    rng: np.random.Generator,
) -> np.ndarray:
    """Terminal variance sample of ``n_paths`` paths after time ``t``."""
    dt = t / n_steps
    y = np.full(n_paths, y0)
    sqdt = math.sqrt(dt)
    for _ in range(n_steps):
        if scheme == Scheme.EXACT_CIR_MARGINAL:
            _, y = cir_step_arrays(p, y, np.empty(0), dt, scheme, rng=rng)
        else:
            dw = rng.standard_normal(n_paths) * sqdt
            _, y = cir_step_arrays(p, y, dw, dt, scheme)
    return y


def cir_mean(p: HestonParams, y0: float, t: float) -> float:
    """Exact conditional mean theta + (y0 - theta) exp(-kappa t)."""
    return p.theta + (y0 - p.theta) * math.exp(-p.kappa * t)


def cir_variance(p: HestonParams, y0: float, t: float) -> float:
    """Exact conditional variance of the CIR transition."""
    ekt = math.exp(-p.kappa * t)
    s2 = p.sigma * p.sigma
    return (
        y0 * s2 / p.kappa * (ekt - ekt * ekt)
        + p.theta * s2 / (2.0 * p.kappa) * (1.0 - ekt) ** 2
    )
