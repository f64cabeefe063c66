"""Statistical test suite for process-level properties of the model.

Each operation simulates paths on its own seeded stream, computes a
statistic with a pre-registered 3-sigma (or absolute) threshold and returns
a :class:`StatTestReport`.  Negative controls are first-class: where a
property's hypothesis is violated the corresponding test is expected to
fail, and callers assert exactly that.

Conventions: "hit zero" for a discretized variance path means the
pre-truncation value dipped to y <= 0 within a step.  Level crossings at
a > 0 between observation points are resolved by a Brownian-bridge crossing
probability with the local diffusion coefficient frozen, which removes most
of the O(sqrt(dt)) bias of naive endpoint tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ParameterError
from .model import HestonParams, feller_indices, hitting_probability, expected_exit_time
from .rng import substream
from .sde import Scheme, heston_step_arrays, cir_step_arrays, ncx2_transition
from .problems import Estimate

DIAG_TAG = 7


@dataclass(frozen=True)
class StatTestReport:
    name: str
    statistic: float
    threshold: float
    passed: bool
    n_samples: int
    seed: int
    details: dict = field(default_factory=dict)


def _rng(seed: int, *tags: int):
    return substream(seed, DIAG_TAG, *tags)


# ---------------------------------------------------------------------------
# Supermartingale tests
# ---------------------------------------------------------------------------

def supermartingale_test_X(
    p: HestonParams,
    c: float,
    time_grid: Sequence[float],
    n: int,
    seed: int = 0,
    z0: tuple[float, float] = (0.0, None),
    dt: float = 1e-3,
    two_sided: bool = False,
) -> StatTestReport:
    """Nonincreasing-mean test for e^{-r c s} e^{c X(s)}, c in [0, 1], q >= 0.

    Consecutive grid means are compared with paired per-path differences;
    the test fails when any increment exceeds 3 standard errors.  With
    ``two_sided`` (the martingale case c=1, q=0, r=0) increments must stay
    within +-3 sigma of zero.
    """
    if not 0.0 <= c <= 1.0:
        raise ParameterError(f"need c in [0, 1], got {c}")
    if p.q < 0.0:
        raise ParameterError("X-supermartingale requires q >= 0")
    grid = np.asarray(sorted(time_grid), dtype=float)
    if grid[0] < 0.0:
        raise ParameterError("time grid must be nonnegative")
    x0 = z0[0]
    y0 = z0[1] if z0[1] is not None else p.theta

    rng = _rng(seed, 1)
    x = np.full(n, x0)
    y = np.full(n, y0)
    t = 0.0
    prev = np.exp(c * x)  # s = 0 value of the functional
    max_z = -math.inf
    increments = []
    for s in grid:
        if s == 0.0:
            continue
        n_steps = max(1, int(math.ceil((s - t) / dt - 1e-12)))
        h = (s - t) / n_steps
        for _ in range(n_steps):
            z1 = rng.standard_normal(n)
            z2 = rng.standard_normal(n)
            x, _, y = heston_step_arrays(p, x, y, z1, z2, h, Scheme.FULL_TRUNCATION, rng=rng)
        t = s
        cur = np.exp(-p.r * c * s + c * x)
        d = cur - prev
        se = d.std(ddof=1) / math.sqrt(n)
        zscore = d.mean() / se if se > 0.0 else 0.0
        increments.append((s, float(d.mean()), float(se)))
        stat = abs(zscore) if two_sided else zscore
        max_z = max(max_z, stat)
        prev = cur
    if c == 0.0:
        max_z = 0.0  # functional is identically 1
    return StatTestReport(
        name=f"supermartingale_X(c={c})",
        statistic=max_z,
        threshold=3.0,
        passed=max_z <= 3.0,
        n_samples=n,
        seed=seed,
        details={"increments": increments, "two_sided": two_sided},
    )


def supermartingale_test_Y(
    p: HestonParams,
    c: float,
    time_grid: Sequence[float],
    n: int,
    seed: int = 0,
    y0: Optional[float] = None,
    expect_fail: bool = False,
    two_sided: bool = False,
) -> StatTestReport:
    """Nonincreasing-mean test for e^{-c kappa theta s} e^{c Y(s)}.

    Valid for 0 < c <= mu = 2 kappa / sigma^2; exact transition sampling so
    no discretization bias enters.  With ``expect_fail`` the precondition is
    waived (negative control, e.g. c = 2 mu) and the report simply records
    whether an increase was detected.
    """
    idx = feller_indices(p)
    if not expect_fail and not 0.0 < c <= idx.mu:
        raise ParameterError(f"need 0 < c <= mu = {idx.mu:.4g}, got {c}")
    grid = np.asarray(sorted(time_grid), dtype=float)
    y_start = y0 if y0 is not None else p.theta

    rng = _rng(seed, 2)
    y = np.full(n, y_start)
    t = 0.0
    prev = np.exp(c * y)
    max_z = -math.inf
    increments = []
    for s in grid:
        if s == 0.0:
            continue
        y = ncx2_transition(p, y, s - t, rng)
        t = s
        with np.errstate(over="ignore"):
            cur = np.exp(-c * p.kappa * p.theta * s + c * y)
        d = cur - prev
        se = d.std(ddof=1) / math.sqrt(n)
        zscore = d.mean() / se if se > 0.0 else 0.0
        increments.append((s, float(d.mean()), float(se)))
        stat = abs(zscore) if two_sided else zscore
        max_z = max(max_z, stat)
        prev = cur
    return StatTestReport(
        name=f"supermartingale_Y(c={c})",
        statistic=max_z,
        threshold=3.0,
        passed=max_z <= 3.0,
        n_samples=n,
        seed=seed,
        details={"increments": increments, "mu": idx.mu, "negative_control": expect_fail},
    )


def y_functional_variance_horizon(p: HestonParams, c: float) -> float:
    """Largest time s at which e^{c Y(s)} still has a finite second moment.

    The transition law is a scaled noncentral chi-square whose moment
    generating function blows up at 1 / (2 scale); solving
    2c < 2 kappa / (sigma^2 (1 - e^{-kappa s})) for s gives the horizon.
    Time grids for the Y-supermartingale tests should stay below it, or the
    3-sigma z-test loses its meaning.
    """
    ratio = feller_indices(p).mu / (2.0 * c)
    if ratio >= 1.0:
        return math.inf
    return -math.log(1.0 - ratio) / p.kappa


# ---------------------------------------------------------------------------
# Boundary hitting
# ---------------------------------------------------------------------------

def hitting_probability_mc(
    p: HestonParams,
    y0: float,
    a: float,
    b: float,
    n: int,
    dt: float,
    seed: int = 0,
    scheme: Scheme = Scheme.FULL_TRUNCATION,
    bridge: bool = True,
    t_cap: float = 200.0,
) -> Estimate:
    """Monte Carlo P(T_b < T_a) for the variance started at y0 in (a, b).

    With ``bridge`` enabled, undetected level crossings inside a step are
    sampled from the Brownian-bridge crossing probability
    exp(-2 (y_j - l)(y_{j+1} - l) / (sigma^2 ybar dt)) with the diffusion
    frozen at the step's midpoint level.
    """
    if not a < y0 < b:
        raise ParameterError("need a < y0 < b")
    rng = _rng(seed, 3)
    y = np.full(n, y0)
    hit_b = np.zeros(n, dtype=bool)
    resolved = np.zeros(n, dtype=bool)
    sqdt = math.sqrt(dt)
    n_steps = int(math.ceil(t_cap / dt))
    s2 = p.sigma * p.sigma
    for _ in range(n_steps):
        act = np.flatnonzero(~resolved)
        if act.size == 0:
            break
        ya = y[act]
        dw = rng.standard_normal(act.size) * sqdt
        y_raw, y_new = cir_step_arrays(p, ya, dw, dt, scheme, rng=rng)
        hb = y_raw >= b
        ha = (y_raw <= a) & ~hb
        open_ = ~(ha | hb)
        if bridge and open_.any():
            yo0, yo1 = ya[open_], y_raw[open_]
            ybar = np.maximum(0.5 * (yo0 + yo1), 1e-12)
            var = s2 * ybar * dt
            with np.errstate(over="ignore", under="ignore"):
                pa = np.exp(-2.0 * (yo0 - a) * (yo1 - a) / var)
                pb = np.exp(-2.0 * (yo0 - b) * (yo1 - b) / var)
            u = rng.uniform(size=open_.sum())
            cross_a = u < pa
            cross_b = (~cross_a) & (u < pa + pb)
            ha_idx = np.flatnonzero(open_)
            ha[ha_idx[cross_a]] = True
            hb[ha_idx[cross_b]] = True
        newly = ha | hb
        resolved[act[newly]] = True
        hit_b[act[newly]] = hb[newly]
        keep = ~newly
        y[act[keep]] = y_new[keep]
    if not resolved.all():
        raise ParameterError(
            f"{(~resolved).sum()} paths unresolved at t_cap={t_cap}; increase it")
    phat = hit_b.mean()
    se = math.sqrt(max(phat * (1.0 - phat), 1e-300) / n)
    return Estimate(mean=float(phat), std_error=float(se), n_paths=n)


def mean_exit_time_mc(
    p: HestonParams,
    y0: float,
    a: float,
    b: float,
    n: int,
    dt: float,
    seed: int = 0,
    t_cap: float = 200.0,
) -> Estimate:
    """Monte Carlo E[T_a ^ T_b] with bridge-corrected crossing detection.

    Bridge hits are assigned the step midpoint; direct hits the linearly
    interpolated crossing time.
    """
    if not a < y0 < b:
        raise ParameterError("need a < y0 < b")
    rng = _rng(seed, 4)
    y = np.full(n, y0)
    times = np.zeros(n)
    resolved = np.zeros(n, dtype=bool)
    sqdt = math.sqrt(dt)
    n_steps = int(math.ceil(t_cap / dt))
    s2 = p.sigma * p.sigma
    for j in range(n_steps):
        act = np.flatnonzero(~resolved)
        if act.size == 0:
            break
        t0 = j * dt
        ya = y[act]
        dw = rng.standard_normal(act.size) * sqdt
        y_raw, y_new = cir_step_arrays(p, ya, dw, dt, Scheme.FULL_TRUNCATION)
        frac = np.full(act.size, np.nan)
        hb = y_raw >= b
        ha = (y_raw <= a) & ~hb
        with np.errstate(divide="ignore", invalid="ignore"):
            frac[hb] = np.clip((b - ya[hb]) / (y_raw[hb] - ya[hb]), 0.0, 1.0)
            frac[ha] = np.clip((ya[ha] - a) / (ya[ha] - y_raw[ha]), 0.0, 1.0)
        open_ = ~(ha | hb)
        if open_.any():
            yo0, yo1 = ya[open_], y_raw[open_]
            ybar = np.maximum(0.5 * (yo0 + yo1), 1e-12)
            var = s2 * ybar * dt
            with np.errstate(over="ignore", under="ignore"):
                pa = np.exp(-2.0 * (yo0 - a) * (yo1 - a) / var)
                pb = np.exp(-2.0 * (yo0 - b) * (yo1 - b) / var)
            u = rng.uniform(size=open_.sum())
            crossed = u < np.minimum(pa + pb, 1.0)
            oi = np.flatnonzero(open_)[crossed]
            ha[oi] = True  # which level is irrelevant for the exit time
            frac[oi] = 0.5
        newly = ha | hb
        resolved[act[newly]] = True
        times[act[newly]] = t0 + frac[newly] * dt
        keep = ~newly
        y[act[keep]] = y_new[keep]
    if not resolved.all():
        raise ParameterError(
            f"{(~resolved).sum()} paths unresolved at t_cap={t_cap}; increase it")
    return Estimate(mean=float(times.mean()),
                    std_error=float(times.std(ddof=1) / math.sqrt(n)),
                    n_paths=n)


def zero_hit_frequency(
    p: HestonParams,
    y0: float,
    T: float,
    dt: float,
    n: int,
    scheme: Scheme,
    seed: int = 0,
) -> float:
    """Fraction of paths whose pre-truncation variance reaches y <= 0 by T."""
    rng = _rng(seed, 5)
    y = np.full(n, y0)
    hit = np.zeros(n, dtype=bool)
    sqdt = math.sqrt(dt)
    for _ in range(int(round(T / dt))):
        if scheme == Scheme.EXACT_CIR_MARGINAL:
            y_raw, y = cir_step_arrays(p, y, np.empty(0), dt, scheme, rng=rng)
        else:
            dw = rng.standard_normal(n) * sqdt
            y_raw, y = cir_step_arrays(p, y, dw, dt, scheme)
        hit |= y_raw <= 0.0
    return float(hit.mean())


def mean_time_to_zero(
    p: HestonParams,
    y0: float,
    dt: float,
    n: int,
    seed: int = 0,
    t_cap: float = 50.0,
) -> Estimate:
    """Mean first time the (full-truncation) variance dips to y <= 0."""
    rng = _rng(seed, 6)
    y = np.full(n, y0)
    times = np.full(n, np.nan)
    sqdt = math.sqrt(dt)
    n_steps = int(math.ceil(t_cap / dt))
    unresolved = np.ones(n, dtype=bool)
    for j in range(n_steps):
        act = np.flatnonzero(unresolved)
        if act.size == 0:
            break
        dw = rng.standard_normal(act.size) * sqdt
        y_raw, y_new = cir_step_arrays(p, y[act], dw, dt, Scheme.FULL_TRUNCATION)
        hit = y_raw <= 0.0
        times[act[hit]] = (j + 1) * dt
        unresolved[act[hit]] = False
        y[act[~hit]] = y_new[~hit]
    if unresolved.any():
        raise ParameterError(f"{unresolved.sum()} paths never hit zero by {t_cap}")
    return Estimate(mean=float(times.mean()),
                    std_error=float(times.std(ddof=1) / math.sqrt(n)),
                    n_paths=n)


def boundary_hit_stats(
    p: HestonParams,
    y0_grid: Sequence[float],
    scheme: Scheme,
    dt_grid: Sequence[float],
    n: int,
    seed: int = 0,
    T: float = 1.0,
) -> StatTestReport:
    """Classification-consistent hitting behavior.

    beta >= 1: zero-hit frequency must be 0 under the exact sampler and
    nonincreasing in dt under full truncation.  beta < 1: mean time to zero
    must decrease along a decreasing y0 grid.
    """
    idx = feller_indices(p)
    details: dict = {"beta": idx.beta}
    if idx.beta >= 1.0:
        freq_exact = max(
            zero_hit_frequency(p, y0, T, max(dt_grid), n, Scheme.EXACT_CIR_MARGINAL, seed)
            for y0 in y0_grid
        )
        freqs_ft = [
            zero_hit_frequency(p, min(y0_grid), T, dt, n, Scheme.FULL_TRUNCATION, seed)
            for dt in sorted(dt_grid, reverse=True)
        ]
        details["exact_zero_hit_freq"] = freq_exact
        details["ft_freq_by_decreasing_dt"] = freqs_ft
        monotone = all(freqs_ft[k] >= freqs_ft[k + 1] - 3.0 / math.sqrt(n)
                       for k in range(len(freqs_ft) - 1))
        passed = freq_exact == 0.0 and monotone
        stat = freq_exact
    else:
        means = [mean_time_to_zero(p, y0, min(dt_grid), n, seed) for y0 in
                 sorted(y0_grid, reverse=True)]
        details["mean_T0"] = [(m.mean, m.std_error) for m in means]
        decreasing = all(
            means[k].mean - means[k + 1].mean
            > -3.0 * math.hypot(means[k].std_error, means[k + 1].std_error)
            for k in range(len(means) - 1)
        )
        passed = decreasing
        stat = means[-1].mean
    return StatTestReport(
        name=f"boundary_hit_stats(beta={idx.beta:.3g})",
        statistic=float(stat),
        threshold=0.0 if idx.beta >= 1.0 else math.inf,
        passed=passed,
        n_samples=n,
        seed=seed,
        details=details,
    )


# ---------------------------------------------------------------------------
# Occupation time and moments
# ---------------------------------------------------------------------------

def occupation_time_zero_test(
    p: HestonParams,
    y0: float,
    T: float,
    dt_levels: Sequence[float],
    n: int,
    seed: int = 0,
    threshold: float = 1e-3,
) -> StatTestReport:
    """Time-average of 1_{Y = 0} under full truncation, across dt levels.

    Passes when the occupation fraction at the finest level is below the
    threshold and the sequence is nonincreasing under refinement.
    """
    fractions = []
    for dt in sorted(dt_levels, reverse=True):
        rng = _rng(seed, 8, int(round(1.0 / dt)))
        y = np.full(n, y0)
        at_zero = 0
        steps = int(round(T / dt))
        sqdt = math.sqrt(dt)
        for _ in range(steps):
            dw = rng.standard_normal(n) * sqdt
            _, y = cir_step_arrays(p, y, dw, dt, Scheme.FULL_TRUNCATION)
            at_zero += int((y == 0.0).sum())
        fractions.append(at_zero / (n * steps))
    finest = fractions[-1]
    nonincreasing = all(fractions[k] >= fractions[k + 1] - 1e-12
                        for k in range(len(fractions) - 1))
    return StatTestReport(
        name="occupation_time_zero",
        statistic=float(finest),
        threshold=threshold,
        passed=finest < threshold and nonincreasing,
        n_samples=n,
        seed=seed,
        details={"fractions_by_decreasing_dt": fractions},
    )


def moment_bound_test(
    p: HestonParams,
    z: tuple[float, float],
    T: float,
    p_exp: float,
    n: int,
    seed: int = 0,
    dt: float = 1e-3,
    x_levels: Optional[Sequence[float]] = None,
) -> StatTestReport:
    """Uniform exponential-moment check over a family of stopping times.

    Family: deterministic times {T/4, T/2, T} and first hits of the given
    x-levels capped at T.  Passes when every sample mean of e^{p X(theta)}
    is finite; the common envelope is reported.
    """
    x0, y0 = z
    if x_levels is None:
        x_levels = [x0 - 0.5, x0 + 0.5]
    rng = _rng(seed, 9)
    n_steps = int(math.ceil(T / dt))
    x = np.full(n, x0)
    y = np.full(n, y0)
    det_times = [T / 4.0, T / 2.0, T]
    det_vals: dict[float, np.ndarray] = {}
    hit_vals = {lv: np.full(n, np.nan) for lv in x_levels}
    for j in range(n_steps):
        z1 = rng.standard_normal(n)
        z2 = rng.standard_normal(n)
        x, _, y = heston_step_arrays(p, x, y, z1, z2, dt, Scheme.FULL_TRUNCATION, rng=rng)
        t = (j + 1) * dt
        for lv in x_levels:
            unhit = np.isnan(hit_vals[lv])
            crossed = unhit & ((x >= lv) if lv >= x0 else (x <= lv))
            hit_vals[lv][crossed] = x[crossed]
        for s in det_times:
            if s not in det_vals and t >= s - 1e-12:
                det_vals[s] = x.copy()
    means = {}
    with np.errstate(over="ignore"):
        for s, xv in det_vals.items():
            means[f"t={s:g}"] = float(np.mean(np.exp(p_exp * xv)))
        for lv, xv in hit_vals.items():
            vals = np.where(np.isnan(xv), det_vals[T], xv)  # capped at T
            means[f"hit x={lv:g}"] = float(np.mean(np.exp(p_exp * vals)))
    envelope = max(means.values())
    passed = math.isfinite(envelope)
    return StatTestReport(
        name=f"moment_bound(p={p_exp})",
        statistic=float(envelope),
        threshold=math.inf,
        passed=passed,
        n_samples=n,
        seed=seed,
        details={"means": means},
    )


# ---------------------------------------------------------------------------
# MC vs PDE comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    label: str
    mc_value: float
    mc_std_error: float
    oracle_value: float
    tolerance: float     # absolute tolerance in addition to 3 sigma
    z_score: float
    passed: bool


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple
    all_passed: bool


def mc_vs_pde(
    entries: Sequence[tuple[str, Estimate, float, float]],
) -> ComparisonReport:
    """Tabulate MC estimates against oracle values.

    Each entry is (label, estimate, oracle value, absolute tolerance); a row
    passes when |diff| <= max(3 std errors + bias bound, tolerance).
    """
    rows = []
    for label, est, oracle, tol in entries:
        diff = abs(est.mean - oracle)
        zs = diff / est.std_error if est.std_error > 0.0 else math.inf
        passed = diff <= max(3.0 * est.std_error + est.bias_bound, tol)
        rows.append(ComparisonRow(
            label=label, mc_value=est.mean, mc_std_error=est.std_error,
            oracle_value=oracle, tolerance=tol, z_score=zs, passed=passed))
    return ComparisonReport(rows=tuple(rows), all_passed=all(r.passed for r in rows))
