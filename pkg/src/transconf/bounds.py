"""DKW-type envelopes for the empirical distribution function of conformal p-values.

The analytic constant ``lambda_dkw`` guarantees, with probability at least
``1 - delta`` over the universal law,

    sup_t (F_m(t) - I_n(t)) <= lambda_dkw(delta, n, m),

where ``I_n(t) = floor((n+1)t)/(n+1)``. ``lambda_numerical`` targets the same
quantile by Monte Carlo and is sharper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import polya
from .polya import PolyaLaw
from .scores import PValueSet, sup_deviation_batch

SQRT_2PI = math.sqrt(2 * math.pi)
DEFAULT_ITERATIONS = 3
MIN_REPS = 1000


def tau(n: int, m: int) -> float:
    """Effective sample size ``nm/(n+m)``."""
    return n * m / (n + m)


@dataclass(frozen=True)
class DkwParams:
    n: int
    m: int
    delta: float
    r: int = DEFAULT_ITERATIONS

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be >= 1")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.r < 1:
            raise ValueError("the number of Psi iterations must be >= 1")

    @property
    def tau(self) -> float:
        return tau(self.n, self.m)


@dataclass(frozen=True)
class Envelope:
    """An upper confidence envelope for ``F_m``.

    For the DKW kinds the envelope is ``I_n(t) + lam``; templates carry their
    thresholds instead.
    """

    kind: str
    lam: float
    n: int
    m: int
    delta: float
    thresholds: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("analytic-dkw", "numerical-dkw", "simes", "template"):
            raise ValueError(f"unknown envelope kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")


def b_dkw(lam: float, n: int, m: int) -> float:
    if lam >= 1:
        return 0.0
    t = tau(n, m)
    return (1 + 2 * SQRT_2PI * lam * t / math.sqrt(n + m)) * math.exp(-2 * t * lam * lam)


def _normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2))


def crossing_weight(lam: float, n: int, m: int) -> float:
    """``P(N(lam*mu, sigma^2) in [0, lam])`` with ``sigma^2 = 1/(4(n+m))``, ``mu = n/(n+m)``."""
    sigma = 1 / (2 * math.sqrt(n + m))
    mu = n / (n + m)
    return _normal_cdf((lam - lam * mu) / sigma) - _normal_cdf(-lam * mu / sigma)


def b_dkw_full(lam: float, n: int, m: int, c_upper: bool = False) -> float:
    """Sharper bound: convex mix of the two one-sample DKW tails plus a cross term.

    ``c_upper=True`` replaces the Gaussian weight by its upper bound 1.
    """
    if lam >= 1:
        return 0.0
    c = 1.0 if c_upper else crossing_weight(lam, n, m)
    s = n + m
    return (
        n / s * math.exp(-2 * m * lam * lam)
        + m / s * math.exp(-2 * n * lam * lam)
        + c * 2 * SQRT_2PI * lam * n * m / s**1.5 * math.exp(-2 * tau(n, m) * lam * lam)
    )


def psi(x: float, delta: float, n: int, m: int) -> float:
    t = tau(n, m)
    inner = (math.log(1 / delta) + math.log(1 + SQRT_2PI * 2 * t * x / math.sqrt(n + m))) / (2 * t)
    return min(1.0, math.sqrt(inner))


def lambda_dkw(params: DkwParams) -> float:
    """``Psi`` iterated ``r`` times from 1; ``b_dkw`` at the result is <= delta."""
    x = 1.0
    for _ in range(params.r):
        x = psi(x, params.delta, params.n, params.m)
    return x


def lambda_dkw_full(n: int, m: int, delta: float, tol: float = 1e-12) -> float:
    """Smallest ``lam`` (to ``tol``) with ``b_dkw_full(lam) <= delta``, by bisection."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if b_dkw_full(mid, n, m) <= delta:
            hi = mid
        else:
            lo = mid
    return hi


def dkw_envelope(params: DkwParams) -> Envelope:
    return Envelope("analytic-dkw", lambda_dkw(params), params.n, params.m, params.delta)


@dataclass(frozen=True)
class NumericalLambda:
    """Monte-Carlo quantile of the sup deviation, with its sampling error."""

    value: float
    reps: int
    seed: int
    index: int
    tail_at_value: float
    mc_stderr: float

    def __float__(self) -> float:
        return self.value


def lambda_numerical(law: PolyaLaw, delta: float, seed: int, reps: int) -> NumericalLambda:
    """Empirical ``ceil((1-delta) reps)``-th order statistic of the sup deviation."""
    if reps < MIN_REPS:
        raise ValueError(f"reps must be >= {MIN_REPS}, got {reps}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    ranks = polya.sample_urn(law, seed, reps)
    num = np.sort(sup_deviation_batch(ranks, law.n))
    idx = math.ceil((1 - delta) * reps - 1e-9)
    idx = min(max(idx, 1), reps)
    q = int(num[idx - 1])
    value = q / (law.m * (law.n + 1))
    tail = float(np.mean(num > q))
    return NumericalLambda(value, reps, seed, idx, tail, math.sqrt(delta * (1 - delta) / reps))


def simes_statistic(pvals: PValueSet) -> Fraction:
    """``sup_{t in (0,1]} F_m(t)/t``, attained at the ordered p-values: ``max_i (i/m)/p_(i)``."""
    r = np.sort(pvals.ranks).tolist()
    best = max(Fraction(i, ri) for i, ri in enumerate(r, start=1))
    return best * Fraction(pvals.n + 1, pvals.m)


def simes_statistic_batch(ranks: np.ndarray, n: int) -> np.ndarray:
    r = np.sort(np.asarray(ranks), axis=1)
    m = r.shape[1]
    i = np.arange(1, m + 1)
    return np.max(i * (n + 1) / (m * r), axis=1)


def simes_check(lam: float) -> float:
    """Tail bound ``P(sup_t F_m(t)/t >= lam) <= 1/lam``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return min(1.0, 1.0 / lam)
