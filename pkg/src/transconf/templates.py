"""Template envelopes for the p-value ecdf, calibrated by Monte Carlo.

A template is a family of thresholds ``t_k(lam)``, ``k in K``, increasing in
``lam`` with ``t_k(0) = 0``. Calibration picks the largest ``lam`` in a finite
candidate set such that, under the universal law,

    P(for all k in K: F_m(t_k(lam)) <= k/m) >= 1 - delta.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import polya
from ._grid import grid_floor
from ._special import betainc, betaincinv
from .polya import PolyaLaw
from .scores import rank_counts

MIN_REPS = 1000


@dataclass(frozen=True)
class Template:
    kind: str
    m: int
    k_set: tuple[int, ...]
    forward: Callable[[int, float], float] = field(repr=False, compare=False)
    inverse: Callable[[int, float], float] = field(repr=False, compare=False)

    def __post_init__(self):
        ks = tuple(int(k) for k in self.k_set)
        if not ks:
            raise ValueError("the index set K must be nonempty")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError("K must be strictly increasing")
        if ks[0] < 1 or ks[-1] > self.m:
            raise ValueError(f"K must be a subset of 1..{self.m}")
        object.__setattr__(self, "k_set", ks)

    def thresholds(self, lam: float) -> np.ndarray:
        return np.array([self.forward(k, lam) for k in self.k_set])


def _check_k(m: int, k_set):
    if m < 1:
        raise ValueError("m must be >= 1")
    return tuple(range(1, m + 1)) if k_set is None else tuple(sorted(set(int(k) for k in k_set)))


def linear_template(m: int, k_set: Sequence[int] | None = None) -> Template:
    """``t_k(lam) = k lam / m``; the default ``K`` is all of ``1..m``."""
    return Template(
        "linear",
        m,
        _check_k(m, k_set),
        forward=lambda k, lam: k * lam / m,
        inverse=lambda k, p: m * p / k,
    )


def default_beta_k_set(m: int) -> tuple[int, ...]:
    """``{1 + j * ceil(log m) : j = 0, 1, ...} intersected with 1..m``."""
    step = max(1, math.ceil(math.log(m))) if m > 1 else 1
    return tuple(range(1, m + 1, step))


def beta_template(m: int, k_set: Sequence[int] | None = None) -> Template:
    """``t_k(lam)`` is the ``lam``-quantile of Beta(k, m+1-k)."""
    ks = default_beta_k_set(m) if k_set is None else _check_k(m, k_set)
    return Template(
        "beta",
        m,
        ks,
        forward=lambda k, lam: betaincinv(k, m + 1 - k, lam),
        inverse=lambda k, p: betainc(k, m + 1 - k, p),
    )


def make_template(kind: str, m: int, k_set=None) -> Template:
    if kind == "linear":
        return linear_template(m, k_set)
    if kind == "beta":
        return beta_template(m, k_set)
    raise ValueError(f"unknown template kind {kind!r}")


@dataclass(frozen=True)
class CalibratedEnvelope:
    template: Template
    n: int
    lambda_star: float
    thresholds: np.ndarray = field(repr=False)
    delta: float
    index: str
    reps: int
    seed: int
    vacuous: bool = False

    def violated(self, ranks: np.ndarray) -> np.ndarray:
        """Per replicate, whether ``F_m(t_k) > k/m`` for some ``k`` in ``K``."""
        return envelope_violations(self.template.k_set, self.thresholds, ranks, self.n)


def envelope_violations(k_set, thresholds, ranks: np.ndarray, n: int) -> np.ndarray:
    ranks = np.atleast_2d(ranks)
    counts = rank_counts(ranks, n)
    bad = np.zeros(ranks.shape[0], dtype=bool)
    for k, t in zip(k_set, thresholds):
        ell = min(max(grid_floor(t, n), 0), n + 1)
        if ell > 0:
            bad |= counts[:, ell - 1] > k
    return bad


def inverse_table(template: Template, n: int) -> np.ndarray:
    """``T[a, l-1] = t_{K[a]}^{-1}(l/(n+1))`` for ``l = 1..n+1``."""
    grid = np.arange(1, n + 2) / (n + 1)
    return np.array([[template.inverse(k, p) for p in grid] for k in template.k_set])


def coverage_statistic(template: Template, table: np.ndarray, ranks: np.ndarray, index: str = "k") -> np.ndarray:
    """``min_{k in K} t_k^{-1}(p_(k))`` (or ``p_(k+1)``) for every replicate."""
    ranks = np.sort(np.atleast_2d(ranks), axis=1)
    m = ranks.shape[1]
    shift = {"k": 0, "k+1": 1}[index]
    out = np.full(ranks.shape[0], np.inf)
    for a, k in enumerate(template.k_set):
        pos = k - 1 + shift
        if pos >= m:
            continue  # F_m <= 1 = m/m always holds
        out = np.minimum(out, table[a, ranks[:, pos] - 1])
    return out


def calibrate_template(
    law: PolyaLaw,
    template: Template,
    delta: float,
    seed: int,
    reps: int,
    index: str = "k",
) -> CalibratedEnvelope:
    """Largest candidate ``lam`` whose Monte-Carlo coverage is at least ``1 - delta``.

    Candidates are ``t_k^{-1}(l/(n+1))`` that lie in [0, 1]. The coverage
    statistic is computed once per replicate and the empirical quantile is
    snapped down to the candidate set.
    """
    if reps < MIN_REPS:
        raise ValueError(f"reps must be >= {MIN_REPS}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if template.m != law.m:
        raise ValueError("template and law disagree on m")
    if index not in ("k", "k+1"):
        raise ValueError("index must be 'k' or 'k+1'")
    table = inverse_table(template, law.n)
    cands = np.unique(table[(table >= 0) & (table <= 1)])
    ranks = polya.sample_urn(law, seed, reps)
    w = np.sort(coverage_statistic(template, table, ranks, index))
    # need #{W <= lam} <= reps - ceil((1 - delta) reps)
    j = reps - math.ceil((1 - delta) * reps - 1e-9)
    ok = cands[cands < w[j]]
    if ok.size == 0:
        warnings.warn("no template candidate reaches the target coverage; envelope is vacuous", stacklevel=2)
        lam, vacuous = 0.0, True
    else:
        lam, vacuous = float(ok[-1]), False
    return CalibratedEnvelope(
        template=template,
        n=law.n,
        lambda_star=lam,
        thresholds=template.thresholds(lam),
        delta=delta,
        index=index,
        reps=reps,
        seed=seed,
        vacuous=vacuous,
    )
