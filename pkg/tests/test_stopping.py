"""Time-slab grids, regression stopping rules and obstacle values."""

import math

import numpy as np
import pytest

from hestonrep.errors import ParameterError
from hestonrep.estimators import MCSettings, estimate_parabolic_bvp
from hestonrep.geometry import Domain, Rectangle, StoppingRule
from hestonrep.model import GrowthBound, HestonParams
from hestonrep.problems import ParabolicProblem, ProblemData, from_spec
from hestonrep.stopping import (
    KnotRule,
    SlabFunctionals,
    TimeSlabGrid,
    continuation_region,
    validate_slab_length,
    value_obstacle_elliptic,
    value_obstacle_parabolic,
)

P = HestonParams(kappa=2.0, theta=0.09, sigma=0.6, rho=-0.3, r=0.05, q=0.0)


# ---------------------------------------------------------------------------
# Slab grids
# ---------------------------------------------------------------------------

def test_time_slab_grid_knots():
    g = TimeSlabGrid(T=1.0, n_slabs=4)
    assert np.allclose(g.knots, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert g.slab_length == pytest.approx(0.25)


def test_from_slab_length_never_exceeds_request():
    for T, L in [(1.0, 0.3), (1.0, 0.25), (0.7, 0.2), (2.0, 0.5)]:
        g = TimeSlabGrid.from_slab_length(T, L)
        assert g.slab_length <= L + 1e-12
        assert g.knots[-1] == pytest.approx(T)
    with pytest.raises(ParameterError):
        TimeSlabGrid.from_slab_length(1.0, 0.0)


def test_slab_grid_validation():
    with pytest.raises(ParameterError):
        TimeSlabGrid(T=0.0, n_slabs=4)
    with pytest.raises(ParameterError):
        TimeSlabGrid(T=1.0, n_slabs=0)


def test_validate_slab_length_mild_growth():
    v = validate_slab_length(P, GrowthBound(C=1.0, M1=0.5, M2=0.5), 0.02)
    assert v.ok and v.p0 > 1.0
    assert v.binding == ""


def test_validate_slab_length_binding_variance_exponent():
    # M1 above mu leaves no admissible exponent.
    mu = 2 * P.kappa / P.sigma ** 2
    v = validate_slab_length(P, GrowthBound(C=1.0, M1=2 * mu, M2=0.0), 0.02)
    assert not v.ok
    assert "variance" in v.binding


# ---------------------------------------------------------------------------
# Slab payoff composition
# ---------------------------------------------------------------------------

def test_slab_compose():
    sf = SlabFunctionals(t=0.0, slab_end=0.5, r=0.05)
    eta = np.array([0.2, 0.5])
    inner = np.array([1.0, 99.0])
    cont = np.array([88.0, 2.0])
    out = sf.compose(eta, inner, cont)
    assert out[0] == pytest.approx(1.0)           # stopped strictly inside
    assert out[1] == pytest.approx(math.exp(-0.05 * 0.5) * 2.0)


# ---------------------------------------------------------------------------
# Regression rule standardization
# ---------------------------------------------------------------------------

def test_knot_rule_prediction_uses_frozen_standardization():
    rng = np.random.default_rng(0)
    x = rng.normal(size=200)
    y = np.abs(rng.normal(size=200))
    h = np.maximum(1.0 - x, 0.0)
    from hestonrep.stopping import _fit_rule
    target = 2.0 + 0.5 * x
    rule = _fit_rule(x, y, h, target, degree=3)
    pred = rule.predict(x, y, h, degree=3)
    assert np.max(np.abs(pred - target)) < 1e-6
    # Predicting on shifted inputs must use the stored moments, not refit.
    pred2 = rule.predict(x + 1.0, y, h, degree=3)
    assert np.max(np.abs(pred2 - (2.0 + 0.5 * (x + 1.0)))) < 1e-4


# ---------------------------------------------------------------------------
# Parabolic obstacle value by backward induction
# ---------------------------------------------------------------------------

def _american_put_setup(T=0.5):
    x0 = math.log(100.0)
    dom = Domain(Rectangle(x0=x0 - 3.0, x1=x0 + 3.0, y1=2.0))
    growth = GrowthBound(C=120.0, M1=0.0, M2=0.0)
    data = ProblemData(f=from_spec("constant:0"), g=from_spec("put:100"),
                       growth=growth, psi=from_spec("put:100"))
    prob = ParabolicProblem(domain=dom, T=T)
    return (x0, 0.09), data, prob


def test_parabolic_obstacle_bracket_orders():
    z, data, prob = _american_put_setup()
    mc = MCSettings(n_paths=20000, dt=0.01, seed=17)
    grid = TimeSlabGrid(T=prob.T, n_slabs=10)
    val = value_obstacle_parabolic(P, 0.0, z, data, prob, mc, grid,
                                   rule=StoppingRule.NU)
    psi0 = float(data.psi(0.0, np.array([z[0]]), np.array([z[1]]))[0])
    # The bracket is consistent and dominates immediate exercise.
    assert val.low.mean >= psi0 - 1e-12
    assert val.high.mean >= psi0 - 1e-12
    assert val.low.mean <= val.high.mean + 3 * math.hypot(
        val.low.std_error, val.high.std_error)


def test_parabolic_obstacle_dominates_european():
    z, data, prob = _american_put_setup()
    mc = MCSettings(n_paths=20000, dt=0.01, seed=18)
    grid = TimeSlabGrid(T=prob.T, n_slabs=10)
    val = value_obstacle_parabolic(P, 0.0, z, data, prob, mc, grid,
                                   rule=StoppingRule.NU)
    euro_data = ProblemData(f=data.f, g=data.g, growth=data.growth)
    euro = estimate_parabolic_bvp(P, 0.0, z, euro_data, prob, StoppingRule.NU, mc)
    slack = 3 * math.hypot(val.high.std_error, euro.std_error)
    assert val.high.mean >= euro.mean - slack


def test_parabolic_obstacle_requires_psi():
    z, data, prob = _american_put_setup()
    stripped = ProblemData(f=data.f, g=data.g, growth=data.growth)
    with pytest.raises(ParameterError):
        value_obstacle_parabolic(P, 0.0, z, stripped, prob,
                                 MCSettings(n_paths=100, dt=0.01),
                                 TimeSlabGrid(T=prob.T, n_slabs=4))


def test_parabolic_obstacle_reproducible():
    z, data, prob = _american_put_setup()
    mc = MCSettings(n_paths=5000, dt=0.02, seed=19)
    grid = TimeSlabGrid(T=prob.T, n_slabs=5)
    a = value_obstacle_parabolic(P, 0.0, z, data, prob, mc, grid, rule=StoppingRule.NU)
    b = value_obstacle_parabolic(P, 0.0, z, data, prob, mc, grid, rule=StoppingRule.NU)
    assert a.low.mean == b.low.mean
    assert a.high.mean == b.high.mean


# ---------------------------------------------------------------------------
# Elliptic obstacle value by region iteration
# ---------------------------------------------------------------------------

def test_elliptic_obstacle_value_bracket():
    dom = Domain(Rectangle(x0=0.0, x1=1.0, y1=0.5))
    growth = GrowthBound(C=2.0, M1=0.0, M2=0.0)
    data = ProblemData(f=from_spec("constant:0"), g=from_spec("constant:1"),
                       growth=growth,
                       psi=from_spec("bump:0.5,0.25,0.3,0.8"))
    mc = MCSettings(n_paths=3000, dt=0.01, seed=20, t_max=30.0)
    val = value_obstacle_elliptic(P, (0.5, 0.25), data, dom,
                                  rule=StoppingRule.TAU, mc=mc,
                                  grid_shape=(7, 5))
    psi0 = float(data.psi(0.0, np.array([0.5]), np.array([0.25]))[0])
    assert val.low.mean >= psi0 - 3 * val.low.std_error
    # Boundary data is 1 everywhere, so the value cannot exceed 1 by much.
    assert val.low.mean <= 1.0 + 3 * val.low.std_error


# ---------------------------------------------------------------------------
# Continuation region extraction
# ---------------------------------------------------------------------------

def test_continuation_region():
    u = np.array([[1.0, 0.5], [0.2, 0.2]])
    psi = np.array([[0.5, 0.5], [0.2, 0.2]])
    mask = continuation_region(u, psi, tolerance=1e-6)
    assert mask.tolist() == [[True, False], [False, False]]
    with pytest.raises(ParameterError):
        continuation_region(u - 1.0, psi, tolerance=1e-6)
