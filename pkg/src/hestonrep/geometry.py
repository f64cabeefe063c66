"""Subdomains of the upper half-plane, boundary decomposition and exit
detection for simulated paths.

A domain O sits in H = {(x, y): y > 0}.  Its boundary splits into Gamma0, the
part on the degenerate line {y = 0}, and Gamma1, the part inside H.  Two exit
semantics are supported: ``TAU`` stops on any boundary contact, ``NU`` ignores
contact with the closure of O on {y = 0} (the process may sit there and
re-enter).  For beta >= 1 the variance never reaches zero, so the two rules
coincide almost surely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .errors import ParameterError
from .model import FellerIndices

BOUNDARY_TOL = 1e-12


class PointClass(Enum):
    INTERIOR = "interior"
    GAMMA0 = "gamma0"
    GAMMA1 = "gamma1"
    EXTERIOR = "exterior"


class StoppingRule(Enum):
    TAU = "tau"  # stop on any exit from O
    NU = "nu"    # exits through the degenerate boundary do not stop the clock


class BoundaryConditionMode(Enum):
    GAMMA1_ONLY = "gamma1_only"
    FULL_BOUNDARY = "full_boundary"


def default_boundary_mode(idx: FellerIndices) -> BoundaryConditionMode:
    """Data locus implied by the Feller index: Gamma1 only for beta >= 1,
    the full boundary for 0 < beta < 1."""
    if idx.beta >= 1.0:
        return BoundaryConditionMode.GAMMA1_ONLY
    return BoundaryConditionMode.FULL_BOUNDARY


def stopping_equivalence(idx: FellerIndices) -> bool:
    """True iff the tau and nu exit rules agree almost surely (beta >= 1)."""
    return idx.beta >= 1.0


@dataclass(frozen=True)
class ExitEvent:
    time: float
    location: tuple[float, float]
    portion: str  # "gamma0", "gamma1" or "terminal"


@dataclass(frozen=True)
class Rectangle:
    """Open rectangle (x0, x1) x (y0, y1); x bounds may be infinite.

    y0 = 0 means the domain touches the degenerate line and Gamma0 is the
    bottom face.  y1 may be infinite (a vertical strip).
    """

    x0: float
    x1: float
    y0: float = 0.0
    y1: float = math.inf

    def __post_init__(self):
        if not self.x0 < self.x1:
            raise ParameterError(f"need x0 < x1, got {self.x0}, {self.x1}")
        if self.y0 != 0.0:
            raise ParameterError("rectangles must rest on the degenerate line (y0 = 0)")
        if not self.y1 > 0.0:
            raise ParameterError(f"need y1 > 0, got {self.y1}")


@dataclass(frozen=True)
class HalfPlane:
    """The whole open upper half-plane; Gamma1 is empty, Gamma0 = {y = 0}."""


@dataclass(frozen=True)
class Custom:
    """Predicate-based domain: ``inside(x, y)`` on the open half-plane plus a
    classifier for boundary points returning a :class:`PointClass`."""

    inside: Callable[[float, float], bool]
    classify: Callable[[float, float], PointClass]


@dataclass(frozen=True)
class Domain:
    shape: Rectangle | HalfPlane | Custom

    @property
    def has_gamma1(self) -> bool:
        if isinstance(self.shape, HalfPlane):
            return False
        return True


def classify_point(d: Domain, z: tuple[float, float]) -> PointClass:
    """Partition the closed half-plane into interior / Gamma0 / Gamma1 / exterior."""
    x, y = z
    if y < -BOUNDARY_TOL:
        raise ParameterError(f"point must lie in the closed half-plane, got y={y}")
    s = d.shape
    if isinstance(s, HalfPlane):
        return PointClass.GAMMA0 if y <= BOUNDARY_TOL else PointClass.INTERIOR
    if isinstance(s, Custom):
        cls = s.classify(x, y)
        if cls == PointClass.INTERIOR and not s.inside(x, y):
            raise ParameterError("custom classifier inconsistent with membership predicate")
        return cls
    # Rectangle
    on_x = s.x0 - BOUNDARY_TOL <= x <= s.x1 + BOUNDARY_TOL
    in_x = s.x0 + BOUNDARY_TOL < x < s.x1 - BOUNDARY_TOL
    if y <= BOUNDARY_TOL:
        return PointClass.GAMMA0 if on_x else PointClass.EXTERIOR
    if y >= s.y1 - BOUNDARY_TOL:
        if abs(y - s.y1) <= BOUNDARY_TOL and on_x:
            return PointClass.GAMMA1
        return PointClass.EXTERIOR
    if in_x:
        return PointClass.INTERIOR
    if on_x:
        return PointClass.GAMMA1
    return PointClass.EXTERIOR


@dataclass(frozen=True)
class Segment:
    """One simulation step: pre/post states with times."""

    t0: float
    x0: float
    y0: float
    t1: float
    x1: float
    y1: float


def detect_exit(d: Domain, rule: StoppingRule, seg: Segment) -> Optional[ExitEvent]:
    """First crossing of the stopping locus along the interpolated segment.

    The segment is traversed linearly in (x, y) with time interpolated in
    proportion; the earliest face crossing wins.  Under ``NU`` crossings into
    Gamma0 are ignored and the path continues.  ``y1`` may be the raw
    (pre-truncation) variance so that dips below zero register as Gamma0
    contact.
    """
    s = d.shape
    if isinstance(s, Custom):
        return _detect_exit_custom(s, rule, seg)

    candidates: list[tuple[float, str]] = []
    if isinstance(s, (Rectangle, HalfPlane)):
        # Degenerate line: y crossing <= 0.
        if seg.y1 <= 0.0 < seg.y0:
            a = seg.y0 / (seg.y0 - seg.y1)
            candidates.append((a, "gamma0"))
        elif seg.y0 <= 0.0:
            candidates.append((0.0, "gamma0"))
    if isinstance(s, Rectangle):
        for bound, lo in ((s.x0, True), (s.x1, False)):
            if not math.isfinite(bound):
                continue
            d0 = seg.x0 - bound
            d1 = seg.x1 - bound
            outside1 = d1 <= 0.0 if lo else d1 >= 0.0
            if outside1 and d0 != d1:
                a = d0 / (d0 - d1)
                if 0.0 <= a <= 1.0:
                    candidates.append((a, "gamma1"))
        if math.isfinite(s.y1) and seg.y1 >= s.y1 > seg.y0:
            a = (s.y1 - seg.y0) / (seg.y1 - seg.y0)
            candidates.append((a, "gamma1"))

    if rule == StoppingRule.NU:
        candidates = [c for c in candidates if c[1] != "gamma0"]
    if not candidates:
        return None
    a, portion = min(candidates, key=lambda c: c[0])
    t = seg.t0 + a * (seg.t1 - seg.t0)
    x = seg.x0 + a * (seg.x1 - seg.x0)
    y = seg.y0 + a * (seg.y1 - seg.y0)
    if portion == "gamma0":
        y = 0.0
    return ExitEvent(time=t, location=(x, y), portion=portion)


def _detect_exit_custom(s: Custom, rule: StoppingRule, seg: Segment) -> Optional[ExitEvent]:
    y1c = max(seg.y1, 0.0)
    end_inside = seg.y1 > 0.0 and s.inside(seg.x1, y1c)
    hits_gamma0 = seg.y1 <= 0.0
    if end_inside:
        return None
    if hits_gamma0 and rule == StoppingRule.NU:
        return None
    # Bisect for the first crossing along the segment.
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        xm = seg.x0 + mid * (seg.x1 - seg.x0)
        ym = seg.y0 + mid * (seg.y1 - seg.y0)
        if ym > 0.0 and s.inside(xm, ym):
            lo = mid
        else:
            hi = mid
    a = hi
    t = seg.t0 + a * (seg.t1 - seg.t0)
    x = seg.x0 + a * (seg.x1 - seg.x0)
    y = max(seg.y0 + a * (seg.y1 - seg.y0), 0.0)
    cls = s.classify(x, y)
    portion = "gamma0" if (y <= BOUNDARY_TOL or cls == PointClass.GAMMA0) else "gamma1"
    if portion == "gamma0" and rule == StoppingRule.NU:
        return None
    return ExitEvent(time=t, location=(x, y), portion=portion)
