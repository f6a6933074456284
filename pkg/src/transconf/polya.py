"""The universal joint law of m conformal p-values built on n calibration scores.

Under exchangeable, tie-free scores the rank vector of the test p-values has
the law of the colours of ``m`` successive draws from a Polya urn that starts
with one ball of each of the ``n+1`` colours. This module exposes that law
exactly (rational arithmetic for small ``n+m``, log-space floats otherwise)
and through two seeded samplers.

Samplers return ``(reps, m)`` integer arrays of ranks in ``[1, n+1]``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import _rng
from ._grid import grid_floor

EXACT_LIMIT = 20


@dataclass(frozen=True)
class PolyaLaw:
    n: int
    m: int

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError(f"need n >= 1 and m >= 1, got n={self.n}, m={self.m}")

    @property
    def exact(self) -> bool:
        return self.n + self.m <= EXACT_LIMIT


@dataclass(frozen=True)
class PseudoScoreVector:
    """Pseudo-scores ``U`` in [0,1]^n defining the cell law ``P^U``."""

    u: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float).ravel()
        if u.size < 1 or np.any((u < 0) | (u > 1)):
            raise ValueError("pseudo-scores must lie in [0, 1]")
        object.__setattr__(self, "u", u)

    def atoms(self) -> np.ndarray:
        """``P^U({l/(n+1)}) = U_(l) - U_(l-1)`` for ``l = 1..n+1``."""
        return np.diff(np.concatenate([[0.0], np.sort(self.u), [1.0]]))

    def cdf(self, x: float) -> float:
        """``F^U(x) = U_(floor((n+1)x))`` with ``U_(0) = 0`` and ``U_(n+1) = 1``."""
        order = np.concatenate([[0.0], np.sort(self.u), [1.0]])
        ell = min(max(grid_floor(x, self.u.size), 0), self.u.size + 1)
        return float(order[ell])


@dataclass(frozen=True)
class Histogram:
    bins: tuple[int, ...]

    def __post_init__(self):
        bins = tuple(int(b) for b in self.bins)
        if any(b < 0 for b in bins):
            raise ValueError("histogram bins must be nonnegative")
        object.__setattr__(self, "bins", bins)

    @property
    def total(self) -> int:
        return sum(self.bins)

    @classmethod
    def of(cls, j: Sequence[int], n: int) -> "Histogram":
        c = Counter(int(x) for x in j)
        return cls(tuple(c.get(k, 0) for k in range(1, n + 2)))


# -- exact probabilities ---------------------------------------------------


def _check_traj(law: PolyaLaw, j: Sequence[int], length: int | None = None) -> list[int]:
    j = [int(x) for x in j]
    if length is not None and len(j) != length:
        raise ValueError(f"expected a vector of length {length}, got {len(j)}")
    for x in j:
        if not 1 <= x <= law.n + 1:
            raise ValueError(f"entry {x} outside [1, {law.n + 1}]")
    return j


def _use_exact(law: PolyaLaw, exact: bool | None) -> bool:
    return law.exact if exact is None else exact


def _multiplicity_factorial(j: Sequence[int]) -> int:
    return math.prod(math.factorial(c) for c in Counter(j).values())


def _log_multiplicity_factorial(j: Sequence[int]) -> float:
    return sum(math.lgamma(c + 1) for c in Counter(j).values())


def joint_pmf(law: PolyaLaw, j: Sequence[int], exact: bool | None = None):
    """``P(p = j/(n+1)) = M(j)! n! / (n+m)!``.

    Returns a :class:`~fractions.Fraction` when ``n+m <= 20`` (or ``exact``
    is forced) and a float otherwise.
    """
    j = _check_traj(law, j, law.m)
    n, m = law.n, law.m
    if _use_exact(law, exact):
        return Fraction(_multiplicity_factorial(j) * math.factorial(n), math.factorial(n + m))
    return math.exp(_log_multiplicity_factorial(j) + math.lgamma(n + 1) - math.lgamma(n + m + 1))


def sequential_pmf(law: PolyaLaw, history: Sequence[int], nxt: int) -> Fraction:
    """Urn rule: ``(1 + #{k : history_k = next}) / (n+1+i)``."""
    history = _check_traj(law, history)
    if len(history) >= law.m:
        raise ValueError(f"history length {len(history)} must be < m = {law.m}")
    (nxt,) = _check_traj(law, [nxt])
    return Fraction(1 + history.count(nxt), law.n + 1 + len(history))


def histogram_pmf(law: PolyaLaw, h: Histogram, exact: bool | None = None):
    """Every histogram of m draws into n+1 bins has mass ``1/binom(n+m, m)``."""
    if len(h.bins) != law.n + 1:
        raise ValueError(f"histogram needs {law.n + 1} bins, got {len(h.bins)}")
    if h.total != law.m:
        raise ValueError(f"histogram bins sum to {h.total}, expected m = {law.m}")
    if _use_exact(law, exact):
        return Fraction(1, math.comb(law.n + law.m, law.m))
    return math.exp(math.lgamma(law.n + 1) + math.lgamma(law.m + 1) - math.lgamma(law.n + law.m + 1))


def trajectory_conditional_pmf(law: PolyaLaw, j: Sequence[int]) -> Fraction:
    """Given its histogram, the trajectory is uniform: ``M(j)! / m!``."""
    j = _check_traj(law, j, law.m)
    return Fraction(_multiplicity_factorial(j), math.factorial(law.m))


def marques_k0(alpha, n: int) -> int:
    """Number of grid atoms ``l/(n+1)`` that are ``<= alpha``.

    This is ``floor(alpha (n+1))``; on the grid it equals the ceiling.
    """
    return grid_floor(alpha, n)


def _rising(a: int, k: int) -> int:
    return math.prod(range(a, a + k))


def ecdf_count_pmf(law: PolyaLaw, alpha, k: int, exact: bool | None = None):
    """``P(F_m(alpha) = k/m)`` in closed form (two-colour Polya urn).

    With ``k0 = #{l : l/(n+1) <= alpha}`` balls of the "small" colour out of
    ``n+1``, the count of p-values ``<= alpha`` is beta-binomial:
    ``binom(m,k) k0^(k) (n+1-k0)^(m-k) / (n+1)^(m)`` in rising factorials.
    """
    if not 0 < float(alpha) < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    n, m = law.n, law.m
    if not 0 <= k <= m:
        raise ValueError(f"k must lie in [0, {m}]")
    k0 = marques_k0(alpha, n)
    if _use_exact(law, exact):
        num = math.comb(m, k) * _rising(n - k0 + 1, m - k) * _rising(k0, k)
        return Fraction(num, _rising(n + 1, m))
    if (k0 == 0 and k > 0) or (k0 == n + 1 and k < m):
        return 0.0
    lg = math.lgamma
    logp = (
        lg(m + 1) - lg(k + 1) - lg(m - k + 1)
        + (lg(n - k0 + 1 + m - k) - lg(n - k0 + 1) if m > k else 0.0)
        + (lg(k0 + k) - lg(k0) if k > 0 else 0.0)
        - (lg(n + 1 + m) - lg(n + 1))
    )
    return math.exp(logp)


def two_color_sequential(law: PolyaLaw, alpha, history: Sequence[int]) -> tuple[Fraction, Fraction]:
    """Law of ``Z_{i+1} = 1{p_{i+1} > alpha}`` given indicators ``Z_1..Z_i``.

    Returns ``(P(Z=0), P(Z=1))``; the urn starts with ``floor(alpha(n+1))``
    zeros and ``n+1`` minus that many ones.
    """
    if not 0 < float(alpha) < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    history = [int(z) for z in history]
    if any(z not in (0, 1) for z in history):
        raise ValueError("history must contain 0/1 indicators")
    zeros0 = grid_floor(alpha, law.n)
    ones0 = law.n + 1 - zeros0
    i = len(history)
    ones = sum(history)
    denom = law.n + 1 + i
    return Fraction(zeros0 + i - ones, denom), Fraction(ones0 + ones, denom)


# -- samplers --------------------------------------------------------------


def _urn_block(n: int, m: int, size: int, rng: np.random.Generator) -> np.ndarray:
    # The urn after i draws holds the n+1 initial balls plus one copy of each
    # earlier draw, so a uniform ball index either names an initial colour or
    # points back at a previous draw.
    out = np.empty((size, m), dtype=np.int64)
    rows = np.arange(size)
    for i in range(m):
        idx = (rng.random(size) * (n + 1 + i)).astype(np.int64)
        idx = np.minimum(idx, n + i)
        fresh = idx <= n
        col = np.empty(size, dtype=np.int64)
        col[fresh] = idx[fresh] + 1
        back = ~fresh
        col[back] = out[rows[back], idx[back] - (n + 1)]
        out[:, i] = col
    return out


def sample_urn(law: PolyaLaw, seed: int, reps: int) -> np.ndarray:
    """``reps`` independent urn trajectories as a ``(reps, m)`` rank array."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    parts = [_urn_block(law.n, law.m, size, rng) for size, rng in _rng.blocks(seed, reps)]
    return np.concatenate(parts, axis=0)


def _representation_block(n: int, m: int, size: int, rng: np.random.Generator) -> np.ndarray:
    u = np.sort(rng.random((size, n)), axis=1)
    v = rng.random((size, m))
    # row-offset trick: one global searchsorted over all rows at once
    offsets = np.arange(size, dtype=float)[:, None] * 2.0
    pos = np.searchsorted((u + offsets).ravel(), (v + offsets).ravel(), side="left")
    return (pos.reshape(size, m) - np.arange(size)[:, None] * n + 1).astype(np.int64)


def sample_representation(law: PolyaLaw, seed: int, reps: int) -> np.ndarray:
    """Draw ``U ~ Unif[0,1]^n``, then ``m`` i.i.d. cells of ``P^U`` per replicate."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    parts = [_representation_block(law.n, law.m, size, rng) for size, rng in _rng.blocks(seed, reps)]
    return np.concatenate(parts, axis=0)


def sample_given_u(u: PseudoScoreVector, m: int, seed: int, reps: int) -> np.ndarray:
    """``m`` i.i.d. draws from ``P^U`` for a fixed pseudo-score vector."""
    order = np.sort(u.u)
    rng = _rng.stream(seed, 0)
    v = rng.random((reps, m))
    return np.searchsorted(order, v, side="left") + 1
