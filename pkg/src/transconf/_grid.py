"""Snapping of real levels onto the conformal grid {l/(n+1)}."""

from __future__ import annotations

import math
from fractions import Fraction
from numbers import Rational

# Reals within this distance of a grid point are treated as lying on it, so
# that e.g. 0.3 * 10 == 3.0000000000000004 still snaps to 3.
GRID_EPS = 1e-9


def scaled_floor(t, k: int) -> int:
    """``floor(t * k)``, exact for rationals and GRID_EPS-tolerant for floats."""
    if isinstance(t, Rational):
        return math.floor(Fraction(t) * k)
    return math.floor(float(t) * k + GRID_EPS)


def grid_floor(t, n: int) -> int:
    """Largest integer l with l/(n+1) <= t (up to GRID_EPS)."""
    return scaled_floor(t, n + 1)


def grid_ceil(t, n: int) -> int:
    """Smallest integer l with l/(n+1) >= t (up to GRID_EPS)."""
    if isinstance(t, Rational):
        return math.ceil(Fraction(t) * (n + 1))
    return math.ceil(float(t) * (n + 1) - GRID_EPS)


def as_fraction(x) -> Fraction:
    """Exact rational for a user-supplied probability.

    Floats go through their shortest decimal repr, so 0.1 maps to 1/10 and
    not to the binary expansion of the double.
    """
    if isinstance(x, Rational):
        return Fraction(x)
    return Fraction(repr(float(x)))
