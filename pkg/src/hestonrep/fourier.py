"""Semi-analytic European option prices under Heston dynamics.

Gil-Pelaez inversion of the log-price characteristic function, written in the
branch-cut-safe ("little trap") form.  Serves as an independent oracle for
the Monte Carlo and finite-difference parabolic solvers.
"""

from __future__ import annotations

import cmath
import math

from scipy import integrate

from .model import HestonParams

_INTEG_LIMIT = 250


def characteristic_fn(p: HestonParams, u: complex, T: float, x: float, v0: float) -> complex:
    """E[exp(i u X(T))] for the log-price X started at (x, v0)."""
    iu = 1j * u
    a = p.kappa - p.rho * p.sigma * iu
    d = cmath.sqrt(a * a + p.sigma * p.sigma * (iu + u * u))
    g = (a - d) / (a + d)
    edt = cmath.exp(-d * T)
    s2 = p.sigma * p.sigma
    C = (p.r - p.q) * iu * T + (p.kappa * p.theta / s2) * (
        (a - d) * T - 2.0 * cmath.log((1.0 - g * edt) / (1.0 - g))
    )
    D = ((a - d) / s2) * (1.0 - edt) / (1.0 - g * edt)
    return cmath.exp(C + D * v0 + iu * x)


def _probability(p: HestonParams, j: int, T: float, x: float, v0: float, log_k: float) -> float:
    phi_minus_i = characteristic_fn(p, -1j, T, x, v0)

    def integrand(u: float) -> float:
        if j == 1:
            val = characteristic_fn(p, u - 1j, T, x, v0) / phi_minus_i
        else:
            val = characteristic_fn(p, u, T, x, v0)
        return (cmath.exp(-1j * u * log_k) * val / (1j * u)).real

    val, _ = integrate.quad(integrand, 1e-12, _INTEG_LIMIT, limit=400, epsabs=1e-12, epsrel=1e-10)
    return 0.5 + val / math.pi


def european_call(p: HestonParams, x: float, v0: float, strike: float, T: float) -> float:
    """Call price on the asset S = e^x with maturity T."""
    log_k = math.log(strike)
    p1 = _probability(p, 1, T, x, v0, log_k)
    p2 = _probability(p, 2, T, x, v0, log_k)
    s = math.exp(x)
    return s * math.exp(-p.q * T) * p1 - strike * math.exp(-p.r * T) * p2


def european_put(p: HestonParams, x: float, v0: float, strike: float, T: float) -> float:
    """Put price via put-call parity."""
    call = european_call(p, x, v0, strike, T)
    s = math.exp(x)
    return call - s * math.exp(-p.q * T) + strike * math.exp(-p.r * T)
