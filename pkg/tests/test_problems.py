"""Problem data catalog, growth validation and compatibility checks."""

import math

import numpy as np
import pytest

from hestonrep.errors import GrowthViolation, ParameterError
from hestonrep.geometry import Domain, Rectangle
from hestonrep.model import GrowthBound, HestonParams
from hestonrep.problems import (
    Estimate,
    ParabolicProblem,
    ProblemData,
    check_compatibility,
    down_and_out_put,
    from_spec,
)

P = HestonParams(kappa=2.0, theta=0.09, sigma=0.6, rho=-0.3, r=0.05, q=0.0)
XS = np.array([-0.5, 0.0, 1.0])
YS = np.array([0.0, 0.1, 0.4])


def test_from_spec_constant_and_zero_tag():
    f = from_spec("constant:2.5")
    assert np.allclose(f(0.0, XS, YS), 2.5)
    assert not f.is_zero
    assert from_spec("constant:0").is_zero


def test_from_spec_affine():
    f = from_spec("affine:1,2,3")
    assert np.allclose(f(0.0, XS, YS), 1 + 2 * XS + 3 * YS)


def test_from_spec_put_call():
    put = from_spec("put:100")
    call = from_spec("call:100")
    x = np.array([math.log(80.0), math.log(125.0)])
    assert np.allclose(put(0.0, x, x * 0), [20.0, 0.0])
    assert np.allclose(call(0.0, x, x * 0), [0.0, 25.0])


def test_from_spec_rejects_unknown():
    with pytest.raises(ParameterError):
        from_spec("nope:1")


def test_down_and_out_put_continuous_at_barrier():
    g = down_and_out_put(100.0, barrier_x=math.log(70.0), ramp_width=0.05)
    xb = math.log(70.0)
    vals = g(0.0, np.array([xb - 0.01, xb, xb + 1e-6, xb + 0.05]), np.zeros(4))
    assert vals[0] == 0.0 and vals[1] == 0.0
    assert 0.0 < vals[2] < vals[3]
    with pytest.raises(ParameterError):
        down_and_out_put(100.0, 0.0, ramp_width=0.0)


def test_bump_data():
    g = from_spec("bump:0.5,0.2,0.1,2.0")
    assert float(g(0.0, np.array([0.5]), np.array([0.2]))[0]) == pytest.approx(2.0)
    assert float(g(0.0, np.array([5.0]), np.array([0.2]))[0]) < 1e-8


def test_problem_data_validate_growth():
    data = ProblemData(f=from_spec("constant:0"), g=from_spec("put:100"),
                       growth=GrowthBound(C=100.0, M1=0.0, M2=0.0))
    data.validate(P, kind="elliptic")
    bad = ProblemData(f=from_spec("constant:0"), g=from_spec("put:100"),
                      growth=GrowthBound(C=1.0, M1=0.0, M2=1e6))
    with pytest.raises(GrowthViolation):
        bad.validate(P, kind="elliptic")


def test_parabolic_problem_requires_positive_horizon():
    dom = Domain(Rectangle(x0=0.0, x1=1.0, y1=1.0))
    with pytest.raises(ParameterError):
        ParabolicProblem(domain=dom, T=0.0)
    assert ParabolicProblem(domain=dom, T=1.0).T == 1.0


def test_check_compatibility():
    good = ProblemData(
        f=from_spec("constant:0"), g=from_spec("put:100"),
        growth=GrowthBound(C=100.0, M1=0.0, M2=0.0),
        psi=from_spec("constant:0"),
    )
    pts = [(0.0, 0.0, 0.1), (0.0, math.log(90.0), 0.0)]
    check_compatibility(good, pts)
    bad = ProblemData(
        f=from_spec("constant:0"), g=from_spec("constant:0"),
        growth=GrowthBound(C=100.0, M1=0.0, M2=0.0),
        psi=from_spec("constant:1"),
    )
    with pytest.raises(ParameterError):
        check_compatibility(bad, pts)


def test_estimate_confidence_interval():
    e = Estimate(mean=1.0, std_error=0.1, n_paths=100)
    lo, hi = e.ci95
    assert lo == pytest.approx(1.0 - 0.196)
    assert hi == pytest.approx(1.0 + 0.196)
    assert e.bias_bound == 0.0
