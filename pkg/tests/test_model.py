"""Model parameters, boundary classification and scale/speed quadrature."""

import math

import numpy as np
import pytest

from hestonrep.errors import GrowthViolation, ParameterError
from hestonrep.model import (
    BoundaryKind,
    FellerIndices,
    GrowthBound,
    HestonParams,
    PointDerivatives,
    apply_generator,
    classify_boundary,
    expected_exit_time,
    feller_indices,
    hitting_probability,
    scale_integral,
    speed_integral,
    validate_growth,
)


def make_params(beta, kappa=2.0, theta=0.09, rho=-0.3, r=0.05, q=0.0):
    sigma = math.sqrt(2.0 * kappa * theta / beta)
    return HestonParams(kappa=kappa, theta=theta, sigma=sigma, rho=rho, r=r, q=q)


# ---------------------------------------------------------------------------
# Parameter validation
# ---------------------------------------------------------------------------

def test_params_reject_bad_values():
    with pytest.raises(ParameterError):
        HestonParams(kappa=-1.0, theta=0.09, sigma=0.6, rho=0.0, r=0.05, q=0.0)
    with pytest.raises(ParameterError):
        HestonParams(kappa=2.0, theta=0.0, sigma=0.6, rho=0.0, r=0.05, q=0.0)
    with pytest.raises(ParameterError):
        HestonParams(kappa=2.0, theta=0.09, sigma=0.0, rho=0.0, r=0.05, q=0.0)
    with pytest.raises(ParameterError):
        HestonParams(kappa=2.0, theta=0.09, sigma=0.6, rho=1.5, r=0.05, q=0.0)


def test_feller_indices_values():
    p = HestonParams(kappa=2.0, theta=0.09, sigma=0.6, rho=-0.3, r=0.05, q=0.0)
    idx = feller_indices(p)
    assert idx.beta == pytest.approx(2 * 2.0 * 0.09 / 0.36)
    assert idx.mu == pytest.approx(2 * 2.0 / 0.36)


def test_growth_bound_envelope_and_validation():
    g = GrowthBound(C=2.0, M1=0.1, M2=0.2)
    assert g.envelope(1.0, 2.0) == pytest.approx(2.0 * (1 + math.exp(0.2) + math.exp(0.2)))
    p = make_params(beta=1.0)
    validate_growth(g, p, kind="parabolic")
    # An x-exponent above the uniform-moment range must be rejected.
    with pytest.raises(GrowthViolation):
        validate_growth(GrowthBound(C=1.0, M1=0.0, M2=1e6), p, kind="parabolic")


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------

def test_generator_on_constant():
    p = make_params(beta=1.0)
    d = PointDerivatives(u=3.0, u_t=0.0, u_x=0.0, u_y=0.0, u_xx=0.0, u_xy=0.0, u_yy=0.0)
    assert apply_generator(p, d, at=(0.2, 0.1)) == pytest.approx(p.r * 3.0)


def test_generator_on_linear_and_quadratic():
    p = make_params(beta=1.0)
    x, y = 0.4, 0.2
    # u = x: A u = r x - (r - q - y/2)
    d = PointDerivatives(u=x, u_t=0.0, u_x=1.0, u_y=0.0, u_xx=0.0, u_xy=0.0, u_yy=0.0)
    assert apply_generator(p, d, (x, y)) == pytest.approx(p.r * x - (p.r - p.q - y / 2))
    # u = x^2: second-order term -(y/2) * 2 enters
    d2 = PointDerivatives(u=x * x, u_t=0.0, u_x=2 * x, u_y=0.0, u_xx=2.0,
                          u_xy=0.0, u_yy=0.0)
    expect = p.r * x * x - (y / 2) * 2.0 - (p.r - p.q - y / 2) * 2 * x
    assert apply_generator(p, d2, (x, y)) == pytest.approx(expect)


# ---------------------------------------------------------------------------
# Boundary classification with certificates
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("beta", [1.0, 1.5, 3.0])
def test_entrance_classification(beta):
    p = make_params(beta=beta)
    cls = classify_boundary(feller_indices(p), p)
    assert cls.kind == BoundaryKind.ENTRANCE
    cert = cls.certificate
    assert cert.scale_diverges
    assert math.isinf(cert.scale_mass)
    assert math.isfinite(cert.speed_mass) and cert.speed_mass > 0


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.9])
def test_reflecting_classification(beta):
    p = make_params(beta=beta)
    cls = classify_boundary(feller_indices(p), p)
    assert cls.kind == BoundaryKind.REGULAR_REFLECTING
    cert = cls.certificate
    assert math.isfinite(cert.scale_mass) and cert.scale_mass > 0
    assert math.isfinite(cert.speed_mass)
    assert math.isfinite(cert.entrance_mass)


def test_classification_without_explicit_params():
    idx = FellerIndices(beta=1.2, mu=10.0)
    assert classify_boundary(idx).kind == BoundaryKind.ENTRANCE
    idx2 = FellerIndices(beta=0.7, mu=10.0)
    assert classify_boundary(idx2).kind == BoundaryKind.REGULAR_REFLECTING


def test_scale_integral_additivity():
    p = make_params(beta=1.3)
    idx = feller_indices(p)
    total = scale_integral(idx, 0.02, 0.5)
    split = scale_integral(idx, 0.02, 0.2) + scale_integral(idx, 0.2, 0.5)
    assert total == pytest.approx(split, rel=1e-8)


# ---------------------------------------------------------------------------
# Hitting probability: boundary values, monotonicity, ODE residual
# ---------------------------------------------------------------------------

def test_hitting_probability_limits_and_monotonicity():
    p = make_params(beta=1.2)
    idx = feller_indices(p)
    a, b = 0.02, 0.5
    u_vals = [hitting_probability(idx, p, a, b, y)
              for y in np.linspace(a + 1e-4, b - 1e-4, 9)]
    assert u_vals[0] < 1e-2
    assert u_vals[-1] > 1 - 1e-2
    assert all(v0 < v1 for v0, v1 in zip(u_vals, u_vals[1:]))


def test_hitting_probability_is_harmonic_for_variance_generator():
    # u(y) = P(T_b < T_a) solves (sigma^2 y / 2) u'' + kappa (theta - y) u' = 0;
    # check the residual with central differences, independent of the scale
    # function representation used to compute u.
    p = make_params(beta=0.8)
    idx = feller_indices(p)
    a, b = 0.03, 0.4
    h = 1e-4
    for y in (0.08, 0.15, 0.3):
        um = hitting_probability(idx, p, a, b, y - h)
        u0 = hitting_probability(idx, p, a, b, y)
        up = hitting_probability(idx, p, a, b, y + h)
        d1 = (up - um) / (2 * h)
        d2 = (up - 2 * u0 + um) / (h * h)
        residual = 0.5 * p.sigma ** 2 * y * d2 + p.kappa * (p.theta - y) * d1
        scale = max(abs(0.5 * p.sigma ** 2 * y * d2), abs(p.kappa * (p.theta - y) * d1), 1.0)
        assert abs(residual) / scale < 1e-4


def test_hitting_probability_rejects_bad_interval():
    p = make_params(beta=1.2)
    idx = feller_indices(p)
    with pytest.raises(ParameterError):
        hitting_probability(idx, p, 0.1, 0.5, 0.05)
    with pytest.raises(ParameterError):
        hitting_probability(idx, p, 0.0, 0.5, 0.2)


# ---------------------------------------------------------------------------
# Expected exit time against an independent finite-difference ODE solve
# ---------------------------------------------------------------------------

def _exit_time_fd(p, a, b, y, n=4000):
    """Solve (sigma^2 z / 2) v'' + kappa (theta - z) v' = -1, v(a)=v(b)=0."""
    zs = np.linspace(a, b, n + 1)
    h = zs[1] - zs[0]
    interior = zs[1:-1]
    diff = 0.5 * p.sigma ** 2 * interior
    drift = p.kappa * (p.theta - interior)
    lower = diff / h ** 2 - drift / (2 * h)
    main = -2 * diff / h ** 2
    upper = diff / h ** 2 + drift / (2 * h)
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla
    A = sp.diags([lower[1:], main, upper[:-1]], offsets=[-1, 0, 1], format="csc")
    v = spla.spsolve(A, -np.ones(n - 1))
    return float(np.interp(y, interior, v))


@pytest.mark.parametrize("beta,a,b,y", [
    (1.2, 0.02, 0.5, 0.09),
    (0.7, 0.05, 0.4, 0.2),
    (2.0, 0.04, 0.6, 0.3),
])
def test_expected_exit_time_matches_fd_ode(beta, a, b, y):
    p = make_params(beta=beta)
    idx = feller_indices(p)
    quad = expected_exit_time(idx, p, a, b, y)
    fd = _exit_time_fd(p, a, b, y)
    assert quad == pytest.approx(fd, rel=2e-3)


def test_expected_exit_time_positive_and_interior_maximal():
    p = make_params(beta=1.0)
    idx = feller_indices(p)
    a, b = 0.03, 0.5
    vals = [expected_exit_time(idx, p, a, b, y) for y in (0.05, 0.2, 0.45)]
    assert all(v > 0 for v in vals)
    # Near either endpoint the exit is quick.
    assert vals[1] > vals[0] and vals[1] > vals[2]


def test_speed_integral_finite_near_zero():
    p = make_params(beta=0.5)
    idx = feller_indices(p)
    m = speed_integral(idx, p, 0.0, 0.3)
    assert math.isfinite(m) and m > 0
