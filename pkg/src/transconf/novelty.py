"""Conformal novelty detection with uniform false discovery proportion bounds.

Test points whose p-value is at most a threshold ``t`` are declared novelties.
Because the null p-values follow the universal law on their own, the DKW
envelope (or the Simes inequality) yields FDP bounds that hold simultaneously
for every threshold, including data-driven ones such as the BH threshold.
Index sets are 0-based numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import _rng
from ._grid import as_fraction, grid_floor
from .bounds import DEFAULT_ITERATIONS, DkwParams, lambda_dkw
from .scores import PValueSet, ScoreSet, conformal_pvalues


@dataclass(frozen=True)
class M0Estimate:
    value: int
    method: str

    def __post_init__(self):
        if self.value < 1:
            raise ValueError("m0 estimate must be >= 1")
        if self.method not in ("dkw", "simes", "none"):
            raise ValueError(f"unknown m0 method {self.method!r}")

    def __int__(self) -> int:
        return self.value


def reject(pvals: PValueSet, t) -> np.ndarray:
    """Indices ``i`` with ``p_i <= t``."""
    ell = grid_floor(t, pvals.n)
    return np.flatnonzero(pvals.ranks <= ell)


def fdp_tdp(rejected, h0, m: int) -> tuple[Fraction, Fraction]:
    """``|R & H0| / max(|R|, 1)`` and ``|R & H1| / max(|H1|, 1)``."""
    r = set(int(i) for i in rejected)
    h0 = set(int(i) for i in h0)
    if any(not 0 <= i < m for i in r | h0):
        raise ValueError(f"indices must lie in [0, {m})")
    h1 = set(range(m)) - h0
    return Fraction(len(r & h0), max(len(r), 1)), Fraction(len(r & h1), max(len(h1), 1))


@lru_cache(maxsize=64)
def _lambda_table(n: int, m: int, delta: float, r: int) -> np.ndarray:
    # entry j-1 holds lambda_dkw(delta, n, j)
    return np.array([lambda_dkw(DkwParams(n, j, delta, r)) for j in range(1, m + 1)])


def lambda_table(n: int, m: int, delta: float, r: int = DEFAULT_ITERATIONS) -> np.ndarray:
    """``lambda_dkw(delta, n, j)`` for ``j = 1..m``."""
    return _lambda_table(int(n), int(m), float(delta), int(r))


def m0_hat_dkw(pvals: PValueSet, delta: float, r: int = DEFAULT_ITERATIONS) -> M0Estimate:
    """Largest ``j`` in ``1..m`` with ``inf_t (#{p_i > t} + j lam_j) / (1 - I_n(t)) >= j``.

    The infimum runs over ``t`` in [0, 1); numerator and denominator are
    constant between grid points and the ratio grows within each constant
    stretch of ``#{p_i > t}``, so only ``l = 0`` and the observed ranks
    ``<= n`` need checking. Falls back to ``m`` when no ``j`` qualifies.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    n, m = pvals.n, pvals.m
    ranks = pvals.ranks
    ells = np.unique(np.concatenate([[0], ranks[ranks <= n]]))
    above = m - np.searchsorted(np.sort(ranks), ells, side="right")  # #{p_i > l/(n+1)}
    j = np.arange(1, m + 1)
    lam = lambda_table(n, m, delta, r)
    # (n+1)(A_l + j lam_j) >= j (n+1-l) for every l
    lhs = (n + 1) * (above[None, :] + (j * lam)[:, None])
    rhs = j[:, None] * (n + 1 - ells[None, :])
    ok = np.all(lhs >= rhs, axis=1)
    hits = np.flatnonzero(ok)
    return M0Estimate(int(j[hits[-1]]) if hits.size else m, "dkw")


def m0_hat_simes(pvals: PValueSet, delta: float) -> M0Estimate:
    """``min(m, ceil(inf_{t in (0, delta)} #{p_i > t} / (1 - t/delta)))``.

    Within each stretch where ``#{p_i > t}`` is constant the ratio increases,
    so the infimum is over grid points in (0, delta) together with ``t -> 0``,
    where the ratio tends to ``m``.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    n, m = pvals.n, pvals.m
    d = as_fraction(delta)
    srt = np.sort(pvals.ranks)
    best = Fraction(m)
    for ell in range(1, n + 1):
        t = Fraction(ell, n + 1)
        if t >= d:
            break
        above = m - int(np.searchsorted(srt, ell, side="right"))
        best = min(best, above / (1 - t / d))
    return M0Estimate(max(1, min(m, math.ceil(best))), "simes")


def _m0_value(m0, default: M0Estimate | None) -> int:
    if m0 is None:
        return default.value
    return int(m0)


def fdp_bound_dkw(pvals: PValueSet, t, delta: float, m0=None, r: int = DEFAULT_ITERATIONS) -> float:
    """``(m0 I_n(t) + m0 lam_{delta,n,m0}) / max(|R(t)|, 1)``; ``m0`` defaults to the DKW estimate."""
    m0 = _m0_value(m0, None if m0 is not None else m0_hat_dkw(pvals, delta, r))
    ell = min(max(grid_floor(t, pvals.n), 0), pvals.n + 1)
    lam = lambda_table(pvals.n, pvals.m, delta, r)[m0 - 1]
    n_rej = int(np.sum(pvals.ranks <= ell))
    return m0 * (ell / (pvals.n + 1) + lam) / max(n_rej, 1)


def fdp_bound_simes(pvals: PValueSet, t, delta: float, m0=None) -> float:
    """``(m0 t / delta) / max(|R(t)|, 1)``; ``m0`` defaults to the Simes estimate."""
    m0 = _m0_value(m0, None if m0 is not None else m0_hat_simes(pvals, delta))
    n_rej = int(np.sum(pvals.ranks <= grid_floor(t, pvals.n)))
    return m0 * float(t) / delta / max(n_rej, 1)


def bh_threshold(pvals: PValueSet, alpha: float) -> tuple[int, np.ndarray]:
    """Benjamini-Hochberg step-up on conformal p-values.

    ``k = max{k : #{p_i <= alpha k/m} >= k}``, rejecting ``{p_i <= alpha k/m}``.
    """
    if not 0 < float(alpha) < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    n, m = pvals.n, pvals.m
    a = as_fraction(alpha)
    srt = np.sort(pvals.ranks)
    k = np.arange(1, m + 1)
    # rank threshold for level alpha k / m: floor(alpha k (n+1) / m), exact
    limit = (a.numerator * k * (n + 1)) // (a.denominator * m)
    passing = np.flatnonzero(srt <= limit)
    k_hat = int(passing[-1] + 1) if passing.size else 0
    ell = (a.numerator * k_hat * (n + 1)) // (a.denominator * m)
    return k_hat, np.flatnonzero(pvals.ranks <= ell)


def adadetect_fdp_bounds(pvals: PValueSet, alpha: float, delta: float, m0_dkw=None, m0_simes=None, r: int = DEFAULT_ITERATIONS):
    """FDP bounds for the BH rejection set at level ``alpha``, uniform over ``alpha``.

    Returns ``(bound_dkw, bound_simes)``, both 0 when BH rejects nothing.
    """
    k_hat, _ = bh_threshold(pvals, alpha)
    if k_hat == 0:
        return 0.0, 0.0
    m = pvals.m
    md = _m0_value(m0_dkw, None if m0_dkw is not None else m0_hat_dkw(pvals, delta, r))
    ms = _m0_value(m0_simes, None if m0_simes is not None else m0_hat_simes(pvals, delta))
    lam = lambda_table(pvals.n, m, delta, r)[md - 1]
    dkw = float(alpha) * md / m + md * lam / k_hat
    simes = ms * float(alpha) / (m * delta)
    return dkw, simes


# -- synthetic novelty detection --------------------------------------------


@dataclass(frozen=True)
class NDData:
    calibration: np.ndarray = field(repr=False)
    test: np.ndarray = field(repr=False)
    h0: np.ndarray

    @property
    def scores(self) -> ScoreSet:
        return ScoreSet(self.calibration, self.test)


def synth_nd(n: int, m0: int, m1: int, shift: float, seed: int, replicate: int = 0) -> NDData:
    """Null scores N(0,1), novelty scores N(shift,1), test order shuffled."""
    if n < 1 or m0 < 0 or m1 < 0 or m0 + m1 < 1:
        raise ValueError("need n >= 1 and m0 + m1 >= 1")
    rng = _rng.stream(seed, replicate)
    cal = rng.standard_normal(n)
    test = rng.standard_normal(m0 + m1)
    test[m0:] += shift
    perm = rng.permutation(m0 + m1)
    test = test[perm]
    h0 = np.sort(np.flatnonzero(perm < m0))
    return NDData(cal, test, h0)


@dataclass(frozen=True)
class RejectionCurve:
    grid: np.ndarray
    reject_counts: np.ndarray
    null_counts: np.ndarray | None
    fdp: np.ndarray | None
    tdp: np.ndarray | None
    bound_dkw: np.ndarray
    bound_simes: np.ndarray


def threshold_curve(pvals: PValueSet, delta: float, h0=None, m0_dkw=None, m0_simes=None, ells=None, r: int = DEFAULT_ITERATIONS) -> RejectionCurve:
    """Rejections, FDP/TDP (when ``h0`` is known) and both bounds at grid thresholds ``l/(n+1)``."""
    n, m = pvals.n, pvals.m
    ells = np.arange(1, n + 1) if ells is None else np.asarray(ells)
    md = _m0_value(m0_dkw, None if m0_dkw is not None else m0_hat_dkw(pvals, delta, r))
    ms = _m0_value(m0_simes, None if m0_simes is not None else m0_hat_simes(pvals, delta))
    srt = np.sort(pvals.ranks)
    rej = np.searchsorted(srt, ells, side="right")
    t = ells / (n + 1)
    lam = lambda_table(n, m, delta, r)[md - 1]
    b_dkw = md * (t + lam) / np.maximum(rej, 1)
    b_simes = ms * t / delta / np.maximum(rej, 1)
    null_counts = fdp = tdp = None
    if h0 is not None:
        h0 = np.asarray(h0, dtype=np.int64)
        null_srt = np.sort(pvals.ranks[h0])
        null_counts = np.searchsorted(null_srt, ells, side="right")
        fdp = null_counts / np.maximum(rej, 1)
        m1 = m - h0.size
        tdp = (rej - null_counts) / max(m1, 1)
    return RejectionCurve(t, rej, null_counts, fdp, tdp, b_dkw, b_simes)


@dataclass(frozen=True)
class NDConfig:
    n: int = 1000
    m0: int = 500
    m1: int = 260
    shift: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.m0 < 0 or self.m1 < 0 or self.m0 + self.m1 < 1:
            raise ValueError("need n >= 1 and m0 + m1 >= 1")

    @property
    def m(self) -> int:
        return self.m0 + self.m1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class NoveltyReport:
    config: NDConfig
    delta: float
    m0_dkw: M0Estimate
    m0_simes: M0Estimate
    curve: RejectionCurve = field(repr=False)
    curve_m: RejectionCurve = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    bh: dict = field(repr=False)


def novelty_report(config: NDConfig, delta: float, alphas: Sequence[float] | None = None, replicate: int = 0) -> NoveltyReport:
    """Threshold and BH (AdaDetect) curves for one synthetic realisation."""
    data = synth_nd(config.n, config.m0, config.m1, config.shift, config.seed, replicate)
    pv = conformal_pvalues(data.scores)
    md, ms = m0_hat_dkw(pv, delta), m0_hat_simes(pv, delta)
    curve = threshold_curve(pv, delta, data.h0, md.value, ms.value)
    curve_m = threshold_curve(pv, delta, data.h0, pv.m, pv.m)
    alphas = np.round(np.arange(1, 20) * 0.05, 10) if alphas is None else np.asarray(alphas, dtype=float)
    rows = {"k_hat": [], "fdp": [], "tdp": [], "bound_dkw": [], "bound_simes": [], "bound_dkw_m": [], "bound_simes_m": []}
    for a in alphas:
        k_hat, rej = bh_threshold(pv, a)
        f, t = fdp_tdp(rej, data.h0, pv.m)
        b1, b2 = adadetect_fdp_bounds(pv, a, delta, md.value, ms.value)
        b3, b4 = adadetect_fdp_bounds(pv, a, delta, pv.m, pv.m)
        for key, v in zip(rows, (k_hat, float(f), float(t), b1, b2, b3, b4)):
            rows[key].append(v)
    return NoveltyReport(config, delta, md, ms, curve, curve_m, alphas, {k: np.array(v) for k, v in rows.items()})


@dataclass(frozen=True)
class NDCoverageSummary:
    reps: int
    delta: float
    alpha: float
    violation_dkw: float
    violation_simes: float
    bh_mean_fdp: float
    bh_mean_tdp: float
    m0_dkw_below: float
    m0_simes_below: float
    mean_m0_dkw: float
    mean_m0_simes: float


def coverage_experiment(config: NDConfig, delta: float, reps: int, alpha: float = 0.1, r: int = DEFAULT_ITERATIONS) -> NDCoverageSummary:
    """Replicated check of the uniform FDP bounds, BH's FDR and m0 conservativeness."""
    n = config.n
    ells = np.arange(1, n + 1)
    viol_dkw = viol_simes = below_dkw = below_simes = 0
    fdp_sum = tdp_sum = md_sum = ms_sum = 0.0
    for rep in range(reps):
        data = synth_nd(config.n, config.m0, config.m1, config.shift, config.seed, rep)
        pv = conformal_pvalues(data.scores)
        md, ms = m0_hat_dkw(pv, delta, r), m0_hat_simes(pv, delta)
        curve = threshold_curve(pv, delta, data.h0, md.value, ms.value, ells, r)
        viol_dkw += bool(np.any(curve.fdp > curve.bound_dkw + 1e-12))
        viol_simes += bool(np.any(curve.fdp > curve.bound_simes + 1e-12))
        below_dkw += md.value < config.m0
        below_simes += ms.value < config.m0
        md_sum += md.value
        ms_sum += ms.value
        _, rej = bh_threshold(pv, alpha)
        f, t = fdp_tdp(rej, data.h0, pv.m)
        fdp_sum += float(f)
        tdp_sum += float(t)
    return NDCoverageSummary(
        reps=reps,
        delta=delta,
        alpha=alpha,
        violation_dkw=viol_dkw / reps,
        violation_simes=viol_simes / reps,
        bh_mean_fdp=fdp_sum / reps,
        bh_mean_tdp=tdp_sum / reps,
        m0_dkw_below=below_dkw / reps,
        m0_simes_below=below_simes / reps,
        mean_m0_dkw=md_sum / reps,
        mean_m0_simes=ms_sum / reps,
    )
