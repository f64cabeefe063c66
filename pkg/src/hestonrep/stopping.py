"""Obstacle-problem values as suprema over stopping times.

The parabolic value is computed by least-squares Monte Carlo: paths are
simulated forward, their states recorded on a knot grid, and backward
induction regresses realized continuation payoffs on a polynomial basis to
decide exercise at each knot.  Two estimates come back: an in-sample
(high-biased) value and an out-of-sample policy resimulation (low-biased),
which bracket the true value up to statistical error.

The elliptic value uses exercise-region policy iteration on a small spatial
grid: evaluate the policy with the Monte Carlo functional, update the region
where the obstacle beats the value, repeat until the region stabilizes.

The knot grid is a :class:`TimeSlabGrid`; :func:`validate_slab_length`
checks the slab length against the exponential-moment feasibility condition
with an empirically calibrated tail constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ParameterError, SolverError
from .geometry import Domain, Rectangle, StoppingRule
from .model import HestonParams, GrowthBound, feller_indices
from .problems import Estimate, ProblemData, ParabolicProblem
from .rng import chunk_stream
from .sde import Scheme, heston_step_arrays
from .estimators import MCSettings, discount_weight, exit_alphas, evaluate_J_e, estimate_elliptic_bvp

RIDGE = 1e-8
MAX_REGION_SWEEPS = 50
TAG_LSMC_TRAIN = 11
TAG_LSMC_TEST = 12


@dataclass(frozen=True)
class TimeSlabGrid:
    """Uniform knots t = T_0 < ... < T_N = T bounding the slab length."""

    T: float
    n_slabs: int

    def __post_init__(self):
        if self.T <= 0.0 or self.n_slabs < 1:
            raise ParameterError("need T > 0 and at least one slab")

    @property
    def knots(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_slabs + 1)

    @property
    def slab_length(self) -> float:
        return self.T / self.n_slabs

    @classmethod
    def from_slab_length(cls, T: float, slab_length: float) -> "TimeSlabGrid":
        """Smallest uniform grid whose slabs do not exceed ``slab_length``."""
        if slab_length <= 0.0:
            raise ParameterError("slab_length must be positive")
        return cls(T=T, n_slabs=max(1, math.ceil(T / slab_length - 1e-12)))


# ---------------------------------------------------------------------------
# Slab-length validation (exponential-moment feasibility)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlabValidation:
    ok: bool
    p0: float                 # certificate exponent (> 1 when ok)
    moment_cap: float         # largest p with E[e^{p X}] empirically finite
    tail_constant: float      # calibrated c in the bound p < c / (2 sigma T)
    binding: str              # "" when ok, else the constraint that failed


def _calibrate_tail_constant(
    p: HestonParams, T: float, seed: int = 2024, n_paths: int = 20000, n_steps: int = 64
) -> float:
    """Empirical tail exponent of the running maximum of X on [0, T].

    Fits log P(max X > a) ~ -lam a on the upper tail; moments E[e^{p max X}]
    are then finite for p < lam, and the constant is reported in the
    normalized form c = lam * 2 sigma T.  A heuristic certificate, not a
    proof.
    """
    rng = chunk_stream(seed, 0, tag=99)
    dt = T / n_steps
    x = np.zeros(n_paths)
    y = np.full(n_paths, p.theta)
    xmax = np.zeros(n_paths)
    for _ in range(n_steps):
        z1 = rng.standard_normal(n_paths)
        z2 = rng.standard_normal(n_paths)
        x, _, y = heston_step_arrays(p, x, y, z1, z2, dt, Scheme.FULL_TRUNCATION, rng=rng)
        np.maximum(xmax, x, out=xmax)
    qs = np.linspace(0.95, 0.999, 12)
    levels = np.quantile(xmax, qs)
    logp = np.log(1.0 - qs)
    # Guard against degenerate spread at tiny T.
    if levels[-1] - levels[0] < 1e-12:
        return math.inf
    slope = np.polyfit(levels, logp, 1)[0]
    lam = max(-slope, 0.0)
    return lam * 2.0 * p.sigma * T


def validate_slab_length(
    p: HestonParams, growth: GrowthBound, slab_length: float, seed: int = 2024
) -> SlabValidation:
    """Search for an exponent p0 > 1 with p0*M1 within the variance moment
    range and p0*M2 below the calibrated X-moment cap for this slab length."""
    idx = feller_indices(p)
    c = _calibrate_tail_constant(p, slab_length, seed=seed)
    moment_cap = c / (2.0 * p.sigma * slab_length)
    cap1 = idx.mu / growth.M1 if growth.M1 > 0.0 else math.inf
    cap2 = moment_cap / growth.M2 if growth.M2 > 0.0 else math.inf
    cap = min(cap1, cap2)
    if cap > 1.0:
        p0 = min(2.0, 0.5 * (1.0 + cap)) if math.isfinite(cap) else 2.0
        return SlabValidation(ok=True, p0=p0, moment_cap=moment_cap,
                              tail_constant=c, binding="")
    binding = ("variance exponent p0*M1 <= mu" if cap1 <= cap2
               else "price moment p0*M2 < c/(2 sigma T)")
    return SlabValidation(ok=False, p0=math.nan, moment_cap=moment_cap,
                          tail_constant=c, binding=binding)


# ---------------------------------------------------------------------------
# Slab payoff decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlabFunctionals:
    """Discounted payoff pieces over a slab [t, T_k].

    ``compose`` re-assembles the total F = 1_{eta < T_k} F1
    + 1_{eta = T_k} e^{-r (T_k - t)} F2, where eta is the stop-or-exit time
    inside the slab, F1 the payoff collected strictly inside and F2 the
    continuation value at the slab end.
    """

    t: float
    slab_end: float
    r: float

    def compose(
        self,
        eta: np.ndarray,
        inner_payoff: np.ndarray,
        continuation: np.ndarray,
    ) -> np.ndarray:
        reached_end = eta >= self.slab_end - 1e-12
        disc = math.exp(-self.r * (self.slab_end - self.t))
        return np.where(reached_end, disc * continuation, inner_payoff)


# ---------------------------------------------------------------------------
# Parabolic obstacle value (LSMC)
# ---------------------------------------------------------------------------

def _features(x: np.ndarray, y: np.ndarray, h: np.ndarray, degree: int = 3) -> np.ndarray:
    """Total-degree-bounded monomials in (x, y, h), without the intercept."""
    feats = []
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            for c in range(degree + 1 - a - b):
                if a + b + c == 0:
                    continue
                feats.append(x**a * y**b * h**c)
    return np.column_stack(feats)


def _ridge_fit(B: np.ndarray, target: np.ndarray) -> np.ndarray:
    A = B.T @ B + RIDGE * np.eye(B.shape[1])
    return np.linalg.solve(A, B.T @ target)


@dataclass
class KnotRule:
    """Fitted exercise rule at one knot: exercise where the discounted
    obstacle beats the regression continuation estimate.

    Standardization statistics are frozen at training time so the rule
    evaluates identically on fresh paths.
    """

    coef: Optional[np.ndarray]   # None -> never exercise at this knot
    means: Optional[np.ndarray] = None
    sds: Optional[np.ndarray] = None

    def predict(self, x: np.ndarray, y: np.ndarray, h: np.ndarray, degree: int) -> np.ndarray:
        F = (_features(x, y, h, degree) - self.means) / self.sds
        B = np.column_stack([np.ones(x.shape[0]), F])
        return B @ self.coef


def _fit_rule(x: np.ndarray, y: np.ndarray, h: np.ndarray, target: np.ndarray,
              degree: int) -> KnotRule:
    F = _features(x, y, h, degree)
    means = F.mean(axis=0)
    sds = np.maximum(F.std(axis=0), 1e-8)
    B = np.column_stack([np.ones(x.shape[0]), (F - means) / sds])
    return KnotRule(coef=_ridge_fit(B, target), means=means, sds=sds)


@dataclass
class StoppingPolicy:
    """Per-knot regression rules; stops at the terminal knot at the latest."""

    grid: TimeSlabGrid
    rules: list            # index k -> KnotRule for knot k (1..N-1)
    degree: int = 3


@dataclass
class _ForwardData:
    """Knot-resolved path data from one forward pass."""

    x: np.ndarray            # (N+1, n) knot states
    y: np.ndarray
    alive: np.ndarray        # (N+1, n) alive (not exited) at knot k
    exit_slab: np.ndarray    # (n,) slab index of exit, N if none
    exit_value: np.ndarray   # (n,) discounted-to-start g at exit (0 if none)
    slab_source: np.ndarray  # (N, n) discounted source collected in slab k


def _forward_pass(
    p: HestonParams,
    z: tuple[float, float],
    data: ProblemData,
    prob: ParabolicProblem,
    rule: StoppingRule,
    mc: MCSettings,
    grid: TimeSlabGrid,
    t_start: float,
    tag: int,
) -> _ForwardData:
    N = grid.n_slabs
    horizon = prob.T - t_start
    knots = t_start + np.linspace(0.0, horizon, N + 1)
    n = mc.n_paths
    r = p.r
    f_zero = getattr(data.f, "is_zero", False)

    X = np.zeros((N + 1, n))
    Y = np.zeros((N + 1, n))
    alive = np.zeros((N + 1, n), dtype=bool)
    exit_slab = np.full(n, N, dtype=np.int64)
    exit_value = np.zeros(n)
    slab_source = np.zeros((N, n))

    for chunk_start in range(0, n, mc.chunk_size):
        m = min(mc.chunk_size, n - chunk_start)
        rng = chunk_stream(mc.seed, chunk_start, tag=tag)
        sl = slice(chunk_start, chunk_start + m)
        x = np.full(m, z[0])
        y = np.full(m, z[1])
        live = np.ones(m, dtype=bool)
        X[0, sl], Y[0, sl], alive[0, sl] = x, y, live

        for k in range(N):
            t0k, t1k = knots[k], knots[k + 1]
            n_steps = max(1, int(math.ceil((t1k - t0k) / mc.dt - 1e-12)))
            dt = (t1k - t0k) / n_steps
            for j in range(n_steps):
                act = np.flatnonzero(live)
                if act.size == 0:
                    break
                t_rel = (t0k - t_start) + j * dt
                xa, ya = x[act], y[act]
                z1 = rng.standard_normal(act.size)
                z2 = rng.standard_normal(act.size)
                x1, y_raw, y1 = heston_step_arrays(p, xa, ya, z1, z2, dt, mc.scheme, rng=rng)
                al, _ = exit_alphas(prob.domain, rule, xa, ya, x1, y_raw)
                exiting = al <= 1.0
                if not f_zero:
                    a_c = np.where(exiting, al, 1.0)
                    w = discount_weight(r, t_rel, t_rel + a_c * dt)
                    xm = xa + 0.5 * a_c * (x1 - xa)
                    ym = np.maximum(ya + 0.5 * a_c * (y_raw - ya), 0.0)
                    fs = w * data.f(t_start + t_rel + 0.5 * a_c * dt, xm, ym)
                    slab_source[k, sl.start + act] += fs
                if exiting.any():
                    ex = act[exiting]
                    a = al[exiting]
                    tau_rel = t_rel + a * dt
                    xe = xa[exiting] + a * (x1[exiting] - xa[exiting])
                    ye = np.maximum(ya[exiting] + a * (y_raw[exiting] - ya[exiting]), 0.0)
                    disc = np.exp(-r * tau_rel)
                    exit_value[sl.start + ex] = disc * data.g(t_start + tau_rel, xe, ye)
                    exit_slab[sl.start + ex] = k
                    live[ex] = False
                keep = ~exiting
                x[act[keep]] = x1[keep]
                y[act[keep]] = y1[keep]
            X[k + 1, sl], Y[k + 1, sl], alive[k + 1, sl] = x, y, live

    return _ForwardData(x=X, y=Y, alive=alive, exit_slab=exit_slab,
                        exit_value=exit_value, slab_source=slab_source)


def _psi_h(data: ProblemData, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.asarray(data.psi(t, x, y), dtype=float)


def _backward_induction(
    fwd: _ForwardData,
    p: HestonParams,
    data: ProblemData,
    prob: ParabolicProblem,
    grid: TimeSlabGrid,
    t_start: float,
    degree: int = 3,
) -> tuple[np.ndarray, StoppingPolicy]:
    """Fit exercise rules knot by knot; returns realized discounted payoffs
    under the fitted policy (in-sample) and the policy itself."""
    N = grid.n_slabs
    horizon = prob.T - t_start
    knots_rel = np.linspace(0.0, horizon, N + 1)
    r = p.r
    n = fwd.x.shape[1]

    # W holds the discounted-to-start payoff collected from the current knot
    # onward for paths alive there; exited paths carry their fixed payoff.
    W = np.zeros(n)
    term = fwd.alive[N]
    W[term] = math.exp(-r * horizon) * np.asarray(
        data.g(prob.T, fwd.x[N][term], fwd.y[N][term]), dtype=float)
    done = fwd.exit_slab < N
    W[done] = fwd.exit_value[done]
    W += fwd.slab_source.sum(axis=0)

    rules: list[Optional[KnotRule]] = [None] * (N + 1)
    for k in range(N - 1, 0, -1):
        tk = t_start + knots_rel[k]
        disc_k = math.exp(-r * knots_rel[k])
        cand = fwd.alive[k]
        if not cand.any():
            rules[k] = KnotRule(coef=None)
            continue
        xk, yk = fwd.x[k][cand], fwd.y[k][cand]
        h = _psi_h(data, tk, xk, yk)
        itm = h > 0.0
        if itm.sum() < 32:
            rules[k] = KnotRule(coef=None)
            continue
        # Continuation target: everything collected strictly after knot k.
        past = fwd.slab_source[:k].sum(axis=0)
        cont = (W - past)[cand]
        kr = _fit_rule(xk[itm], yk[itm], h[itm], cont[itm], degree)
        c_hat = kr.predict(xk[itm], yk[itm], h[itm], degree)
        exercise_local = np.zeros(cand.sum(), dtype=bool)
        exercise_local[np.flatnonzero(itm)] = disc_k * h[itm] > c_hat
        ex_idx = np.flatnonzero(cand)[exercise_local]
        # Exercised paths: payoff = sources before k plus discounted obstacle.
        W[ex_idx] = past[ex_idx] + disc_k * _psi_h(
            data, tk, fwd.x[k][ex_idx], fwd.y[k][ex_idx])
        # They no longer reach later knots.
        fwd.alive[k + 1:, ex_idx] = False
        fwd.exit_slab[ex_idx] = np.minimum(fwd.exit_slab[ex_idx], k)
        fwd.slab_source[k:, ex_idx] = 0.0
        rules[k] = kr

    policy = StoppingPolicy(grid=grid, rules=rules, degree=degree)
    return W, policy


def _policy_resimulate(
    p: HestonParams,
    z: tuple[float, float],
    data: ProblemData,
    prob: ParabolicProblem,
    rule: StoppingRule,
    mc: MCSettings,
    grid: TimeSlabGrid,
    policy: StoppingPolicy,
    t_start: float,
) -> np.ndarray:
    """Fresh paths, frozen rules: realized payoffs of the trained policy."""
    mc2 = MCSettings(n_paths=mc.n_paths, dt=mc.dt, seed=mc.seed + 1,
                     scheme=mc.scheme, chunk_size=mc.chunk_size, step_cap=mc.step_cap)
    fwd = _forward_pass(p, z, data, prob, rule, mc2, grid, t_start, tag=TAG_LSMC_TEST)
    N = grid.n_slabs
    horizon = prob.T - t_start
    knots_rel = np.linspace(0.0, horizon, N + 1)
    r = p.r
    n = fwd.x.shape[1]

    stopped = np.zeros(n, dtype=bool)
    W = np.zeros(n)
    collected = np.zeros(n)  # source integrals up to the stopping decision
    for k in range(1, N):
        tk = t_start + knots_rel[k]
        disc_k = math.exp(-r * knots_rel[k])
        kr = policy.rules[k]
        collected += np.where(~stopped, fwd.slab_source[k - 1], 0.0)
        if kr is None or kr.coef is None:
            continue
        cand = fwd.alive[k] & ~stopped
        if not cand.any():
            continue
        xk, yk = fwd.x[k][cand], fwd.y[k][cand]
        h = _psi_h(data, tk, xk, yk)
        itm = h > 0.0
        if not itm.any():
            continue
        c_hat = kr.predict(xk[itm], yk[itm], h[itm], policy.degree)
        ex_local = np.zeros(int(cand.sum()), dtype=bool)
        ex_local[np.flatnonzero(itm)] = disc_k * h[itm] > c_hat
        ex_idx = np.flatnonzero(cand)[ex_local]
        W[ex_idx] = collected[ex_idx] + disc_k * _psi_h(
            data, tk, fwd.x[k][ex_idx], fwd.y[k][ex_idx])
        stopped[ex_idx] = True
    # Remaining paths: exit payoff or terminal payoff plus their sources.
    rest = ~stopped
    collected += np.where(rest, fwd.slab_source[N - 1] if N >= 1 else 0.0, 0.0)
    exited = rest & (fwd.exit_slab < N)
    W[exited] = fwd.exit_value[exited] + fwd.slab_source[:, exited].sum(axis=0)
    term = rest & fwd.alive[N]
    W[term] = (math.exp(-r * horizon)
               * np.asarray(data.g(prob.T, fwd.x[N][term], fwd.y[N][term]), dtype=float)
               + fwd.slab_source[:, term].sum(axis=0))
    return W


@dataclass
class ObstacleValue:
    low: Estimate            # out-of-sample policy value (low-biased)
    high: Estimate           # in-sample value (high-biased)
    policy: Optional[StoppingPolicy] = None
    region: Optional[np.ndarray] = None

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.low.mean + self.high.mean)


def _mk_estimate(w: np.ndarray) -> Estimate:
    return Estimate(mean=float(w.mean()),
                    std_error=float(w.std(ddof=1) / math.sqrt(w.shape[0])),
                    n_paths=w.shape[0])


def value_obstacle_parabolic(
    p: HestonParams,
    t: float,
    z: tuple[float, float],
    data: ProblemData,
    prob: ParabolicProblem,
    mc: MCSettings,
    grid: TimeSlabGrid,
    rule: StoppingRule = StoppingRule.TAU,
    degree: int = 3,
) -> ObstacleValue:
    """Parabolic obstacle value at (t, z) by regression Monte Carlo.

    Returns a low/high bracket; immediate exercise at t is folded in by
    flooring both estimates at psi(t, z).
    """
    if data.psi is None:
        raise ParameterError("obstacle value requires psi")
    data.validate(p, kind="parabolic")
    if not 0.0 <= t < prob.T:
        raise ParameterError(f"start time must lie in [0, T), got {t}")

    fwd = _forward_pass(p, z, data, prob, rule, mc, grid, t, tag=TAG_LSMC_TRAIN)
    w_high, policy = _backward_induction(fwd, p, data, prob, grid, t, degree)
    w_low = _policy_resimulate(p, z, data, prob, rule, mc, grid, policy, t)

    psi0 = float(_psi_h(data, t, np.asarray([z[0]]), np.asarray([z[1]]))[0])
    high = _mk_estimate(w_high)
    low = _mk_estimate(w_low)
    if psi0 > high.mean:
        high = Estimate(mean=psi0, std_error=high.std_error, n_paths=high.n_paths)
    if psi0 > low.mean:
        low = Estimate(mean=psi0, std_error=low.std_error, n_paths=low.n_paths)
    return ObstacleValue(low=low, high=high, policy=policy)


# ---------------------------------------------------------------------------
# Elliptic obstacle value (exercise-region policy iteration)
# ---------------------------------------------------------------------------

def _region_policy(xs: np.ndarray, ys: np.ndarray, mask: np.ndarray):
    """Nearest-node lookup policy from a grid mask of shape (len(ys), len(xs))."""
    def policy(t, x, y):
        i = np.clip(np.rint((x - xs[0]) / (xs[1] - xs[0])).astype(int), 0, xs.size - 1)
        j = np.clip(np.rint((y - ys[0]) / (ys[1] - ys[0])).astype(int), 0, ys.size - 1)
        return mask[j, i]
    return policy


def value_obstacle_elliptic(
    p: HestonParams,
    z: tuple[float, float],
    data: ProblemData,
    domain: Domain,
    rule: StoppingRule = StoppingRule.TAU,
    mc: MCSettings = MCSettings(n_paths=4000, dt=0.01),
    grid_shape: tuple[int, int] = (13, 9),
    max_sweeps: int = MAX_REGION_SWEEPS,
) -> ObstacleValue:
    """Exercise-region policy iteration on a coarse spatial grid.

    The region starts where the obstacle already beats the constraint-free
    value; each sweep re-evaluates the region policy with common random
    numbers and moves nodes in or out.  Ties within tolerance resolve as
    "stop".  Raises after ``max_sweeps`` without stabilization.
    """
    if data.psi is None:
        raise ParameterError("obstacle value requires psi")
    data.validate(p, kind="elliptic")
    if not isinstance(domain.shape, Rectangle) or not math.isfinite(domain.shape.x1):
        raise ParameterError("region iteration needs a bounded rectangle domain")
    s = domain.shape
    if not math.isfinite(s.y1):
        raise ParameterError("region iteration needs a bounded rectangle domain")
    nxg, nyg = grid_shape
    xs = np.linspace(s.x0, s.x1, nxg + 2)[1:-1]
    ys = np.linspace(0.0, s.y1, nyg + 2)[1:-1]
    Xg, Yg = np.meshgrid(xs, ys)
    psi_g = _psi_h(data, 0.0, Xg.ravel(), Yg.ravel()).reshape(Yg.shape)

    # Seed region: obstacle at least the unconstrained BVP value.
    values = np.empty_like(psi_g)
    for j in range(ys.size):
        for i in range(xs.size):
            est = estimate_elliptic_bvp(p, (xs[i], ys[j]), _strip_psi(data),
                                        domain, rule, mc)
            values[j, i] = est.mean
    region = psi_g >= values
    tol_stop = 1e-9

    converged = False
    for sweep in range(max_sweeps):
        policy = _region_policy(xs, ys, region)
        new_vals = np.empty_like(values)
        for j in range(ys.size):
            for i in range(xs.size):
                est = evaluate_J_e(p, (xs[i], ys[j]), data, domain, policy,
                                   rule, mc)
                new_vals[j, i] = est.mean
        new_vals = np.maximum(new_vals, psi_g)
        new_region = psi_g >= new_vals - tol_stop
        values = new_vals
        if (new_region == region).all():
            region = new_region
            converged = True
            break
        region = new_region
    if not converged:
        raise SolverError(f"exercise region did not stabilize in {max_sweeps} sweeps")

    policy = _region_policy(xs, ys, region)
    est = evaluate_J_e(p, z, data, domain, policy, rule, mc)
    psi0 = float(_psi_h(data, 0.0, np.asarray([z[0]]), np.asarray([z[1]]))[0])
    mean = max(est.mean, psi0)
    final = Estimate(mean=mean, std_error=est.std_error, n_paths=est.n_paths,
                     bias_bound=est.bias_bound, exit_histogram=est.exit_histogram)
    return ObstacleValue(low=final, high=final, policy=None, region=region)


def _strip_psi(data: ProblemData) -> ProblemData:
    return ProblemData(f=data.f, g=data.g, growth=data.growth, psi=None)


def continuation_region(
    value_field: np.ndarray, psi_field: np.ndarray, tolerance: float
) -> np.ndarray:
    """Grid mask of {u > psi + tolerance}; requires u >= psi - tolerance."""
    if (value_field < psi_field - tolerance).any():
        raise ParameterError("value field dips below the obstacle beyond tolerance")
    return value_field > psi_field + tolerance
