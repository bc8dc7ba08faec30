"""Truth functions with evidential horizon 1."""
from __future__ import annotations

import math

from ..narsese import TruthValue

HORIZON = 1.0
_C_MAX = math.nextafter(1.0, 0.0)


def _truth(f: float, c: float) -> TruthValue:
    return TruthValue(min(1.0, max(0.0, f)), min(_C_MAX, max(0.0, c)))


def c2w(c: float) -> float:
    return HORIZON * c / (1.0 - c)


def w2c(w: float) -> float:
    return w / (w + HORIZON)


def revision(a: TruthValue, b: TruthValue) -> TruthValue:
    """Pool two bodies of independent evidence about the same statement."""
    w1, w2 = c2w(a.c), c2w(b.c)
    w = w1 + w2
    if w == 0:
        return _truth(0.5 * (a.f + b.f), 0.0)
    # interpolate rather than divide a weighted sum, so tiny weights stay within [f1, f2]
    return _truth(a.f + (b.f - a.f) * (w2 / w), w2c(w))


def deduction(a: TruthValue, b: TruthValue) -> TruthValue:
    f = a.f * b.f
    return _truth(f, f * a.c * b.c)


def intersection(a: TruthValue, b: TruthValue) -> TruthValue:
    return _truth(a.f * b.f, a.c * b.c)


def expectation(t: TruthValue) -> float:
    return t.c * (t.f - 0.5) + 0.5
