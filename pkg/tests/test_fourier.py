"""Semi-analytic European prices: parity, limits, Black-Scholes degeneration."""

import math

import pytest

from hestonrep.fourier import characteristic_fn, european_call, european_put
from hestonrep.model import HestonParams

P = HestonParams(kappa=2.0, theta=0.09, sigma=0.6, rho=-0.3, r=0.05, q=0.0)
X0 = math.log(100.0)
V0 = 0.09
T = 1.0


def _bs_put(s, k, r, q, vol, T):
    d1 = (math.log(s / k) + (r - q + 0.5 * vol * vol) * T) / (vol * math.sqrt(T))
    d2 = d1 - vol * math.sqrt(T)
    N = lambda z: 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
    return k * math.exp(-r * T) * N(-d2) - s * math.exp(-q * T) * N(-d1)


def test_characteristic_function_at_zero_is_one():
    assert characteristic_fn(P, 0.0, T, X0, V0) == pytest.approx(1.0)


def test_characteristic_function_martingale_normalization():
    # phi(-i) = E[e^{X_T}] = e^{x0 + (r - q) T}
    val = characteristic_fn(P, -1j, T, X0, V0)
    assert abs(val - math.exp(X0 + (P.r - P.q) * T)) / math.exp(X0) < 1e-8


def test_put_call_parity():
    for k in (80.0, 100.0, 120.0):
        c = european_call(P, X0, V0, k, T)
        p = european_put(P, X0, V0, k, T)
        parity = math.exp(X0 - P.q * T) - k * math.exp(-P.r * T)
        assert c - p == pytest.approx(parity, abs=1e-8)


def test_price_bounds_and_monotonicity():
    prev = -1.0
    for k in (60.0, 80.0, 100.0, 120.0, 140.0):
        p = european_put(P, X0, V0, k, T)
        assert p > prev  # increasing in strike
        assert p >= max(k * math.exp(-P.r * T) - math.exp(X0 - P.q * T), 0.0) - 1e-10
        assert p <= k * math.exp(-P.r * T)
        prev = p


def test_deep_limits():
    assert european_put(P, X0, V0, 1e-4, T) == pytest.approx(0.0, abs=1e-8)
    deep = european_put(P, X0, V0, 1e4, T)
    intrinsic = 1e4 * math.exp(-P.r * T) - math.exp(X0 - P.q * T)
    assert deep == pytest.approx(intrinsic, rel=1e-6)


def test_black_scholes_degeneration():
    # Vanishing vol-of-vol and y0 = theta freeze the variance at theta:
    # prices must approach Black-Scholes with vol sqrt(theta).
    p_flat = HestonParams(kappa=2.0, theta=0.09, sigma=1e-4, rho=0.0, r=0.05, q=0.01)
    for k in (90.0, 100.0, 110.0):
        hest = european_put(p_flat, X0, 0.09, k, T)
        bs = _bs_put(100.0, k, 0.05, 0.01, math.sqrt(0.09), T)
        assert hest == pytest.approx(bs, rel=1e-4, abs=1e-4)


def test_put_decreasing_in_spot():
    prices = [european_put(P, math.log(s), V0, 100.0, T) for s in (80.0, 100.0, 125.0)]
    assert prices[0] > prices[1] > prices[2]
