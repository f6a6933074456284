"""Simultaneous conformal prediction intervals and their false coverage proportion.

The band at level ``alpha`` is ``centers +/- S_(ceil((n+1)(1-alpha)))`` built
from the sorted calibration residuals, with ``S_(n+1) = +inf``. Its false
coverage proportion equals the p-value ecdf at ``alpha``, so any envelope for
the ecdf bounds the FCP uniformly over levels.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import _rng
from ._grid import as_fraction, grid_floor, scaled_floor
from .bounds import DkwParams, lambda_dkw
from .polya import PolyaLaw, ecdf_count_pmf
from .scores import ScoreSet, conformal_pvalues, rank_counts


@dataclass(frozen=True)
class PredictionBand:
    centers: np.ndarray = field(repr=False)
    radius: float
    alpha: float
    alpha_effective: Fraction

    def contains(self, outcomes) -> np.ndarray:
        outcomes = np.asarray(outcomes, dtype=float)
        if outcomes.shape != self.centers.shape:
            raise ValueError(f"expected {self.centers.size} outcomes, got {outcomes.size}")
        return np.abs(outcomes - self.centers) <= self.radius


def build_band(calibration_scores, centers, alpha) -> PredictionBand:
    """Intervals ``centers +/- S_(ceil((n+1)(1-alpha)))`` at the grid level below ``alpha``."""
    s = np.sort(np.asarray(calibration_scores, dtype=float))
    n = s.size
    if not 0 <= float(alpha) <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    ell = min(grid_floor(alpha, n), n + 1)
    idx = n + 1 - ell  # ceil((n+1)(1 - l/(n+1)))
    if idx == n + 1:
        radius = math.inf
    elif idx == 0:
        radius = 0.0  # alpha = 1: every p-value is <= 1, nothing is covered
    else:
        radius = float(s[idx - 1])
    return PredictionBand(np.asarray(centers, dtype=float), radius, float(alpha), Fraction(ell, n + 1))


def fcp(band: PredictionBand, outcomes) -> Fraction:
    """Fraction of test outcomes falling outside their interval."""
    inside = band.contains(outcomes)
    return Fraction(int(np.sum(~inside)), inside.size)


def fcp_bound_dkw(alpha: float, params: DkwParams) -> float:
    """``(alpha + lambda_dkw) * 1{alpha >= 1/(n+1)}``, valid uniformly in ``alpha``."""
    if grid_floor(alpha, params.n) < 1:
        return 0.0
    return float(alpha) + lambda_dkw(params)


def fcp_bound_simes(alpha: float, delta: float, n: int) -> float:
    """``(alpha / delta) * 1{alpha >= 1/(n+1)}``."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if grid_floor(alpha, n) < 1:
        return 0.0
    return float(alpha) / delta


def order_statistic_cdf(law: PolyaLaw, k: int, ell: int) -> Fraction:
    """``P(p_(k) <= l/(n+1))`` from the closed-form law of the ecdf count."""
    n, m = law.n, law.m
    if ell <= 0:
        return Fraction(0)
    if ell >= n + 1:
        return Fraction(1)
    t = Fraction(ell, n + 1)
    return sum((ecdf_count_pmf(law, t, j, exact=True) for j in range(k, m + 1)), Fraction(0))


def calibrate_level(law: PolyaLaw, target_fcp: float, delta: float) -> Fraction:
    """Largest grid level ``t`` with ``P(p_(floor(target*m)+1) <= t) <= delta``.

    Using the band at this level keeps ``FCP <= target_fcp`` with probability
    at least ``1 - delta``. Returns 0 (all-reals band) when no level works.
    """
    if not 0 <= float(target_fcp) < 1:
        raise ValueError(f"target FCP must lie in [0, 1), got {target_fcp}")
    if not 0 < float(delta) < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    k = scaled_floor(target_fcp, law.m) + 1
    d = as_fraction(delta)
    # the constraint is monotone in l: bisect for the last level that passes
    lo, hi = 0, law.n + 1  # invariant: lo passes (l = 0 has probability 0), hi fails
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if order_statistic_cdf(law, k, mid) <= d:
            lo = mid
        else:
            hi = mid
    if lo == 0:
        warnings.warn("no grid level meets the FCP constraint; band is all of R", stacklevel=2)
    return Fraction(lo, law.n + 1)


def level_zero_explicit(n: int, m: int, delta: float) -> Fraction:
    """Largest ``k/(n+1)`` with ``prod_i (n-k+i)/(n+i) >= 1 - delta``, ``i = 1..m``."""
    if not 0 < float(delta) < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    target = 1 - as_fraction(delta)
    denom = math.prod(range(n + 1, n + m + 1))
    best = 0
    for k in range(1, n + 2):
        num = math.prod(range(n - k + 1, n - k + m + 1))
        if Fraction(num, denom) >= target:
            best = k
        else:
            break  # the product decreases in k
    return Fraction(best, n + 1)


def alpha_for_radius(calibration_scores, radius: float, rule: str = "smallest") -> Fraction:
    """Data-driven level tied to a maximal interval radius ``L``.

    ``rule="smallest"`` returns the smallest grid level whose band has radius
    at most ``L``, i.e. ``(1 + #{S_i > L})/(n+1)``; if no calibration score is
    at most ``L`` this is 1 (empty band). ``rule="count"`` returns
    ``#{S_i <= L}/(n+1)``. Either choice is covered by the uniform FCP bounds.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    s = np.asarray(calibration_scores, dtype=float)
    n = s.size
    below = int(np.sum(s <= radius))
    if rule == "count":
        return Fraction(below, n + 1)
    if rule == "smallest":
        return Fraction(1 + n - below, n + 1)
    raise ValueError(f"unknown rule {rule!r}")


# -- synthetic regression with a covariate shift ---------------------------

MEAN_FUNCTIONS = {"cos": np.cos, "sin": np.sin, "zero": np.zeros_like}
TRANSFORMS = {
    "identity": lambda w: w,
    "quadratic": lambda w: 0.6 * w + w**2 / 25,
}
PREDICTORS = ("oracle", "naive", "transfer")


@dataclass(frozen=True)
class RegressionConfig:
    n_train: int = 5000
    n: int = 75
    m: int = 75
    sigma: float = 0.1
    mean: str = "cos"
    f_train: str = "identity"
    f_shift: str = "quadratic"
    w_high: float = 5.0
    k_neighbors: int = 25
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n, self.m) < 1:
            raise ValueError("sample sizes must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.mean not in MEAN_FUNCTIONS:
            raise ValueError(f"unknown mean function {self.mean!r}")
        for f in (self.f_train, self.f_shift):
            if f not in TRANSFORMS:
                raise ValueError(f"unknown transform {f!r}")
        if not 1 <= self.k_neighbors <= self.n_train:
            raise ValueError("k_neighbors must lie in [1, n_train]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RegressionData:
    train_x: np.ndarray = field(repr=False)
    train_y: np.ndarray = field(repr=False)
    cal_w: np.ndarray = field(repr=False)
    cal_x: np.ndarray = field(repr=False)
    cal_y: np.ndarray = field(repr=False)
    test_w: np.ndarray = field(repr=False)
    test_x: np.ndarray = field(repr=False)
    test_y: np.ndarray = field(repr=False)


def _draw(config: RegressionConfig, size: int, transform: str, rng: np.random.Generator):
    w = rng.uniform(0.0, config.w_high, size)
    y = MEAN_FUNCTIONS[config.mean](w) + config.sigma * rng.standard_normal(size)
    return w, TRANSFORMS[transform](w), y


def _draw_train(config: RegressionConfig):
    _, x, y = _draw(config, config.n_train, config.f_train, _rng.stream(config.seed, 0))
    return x, y


def _draw_cal_test(config: RegressionConfig, train_x, train_y, replicate: int) -> RegressionData:
    rng = _rng.stream(config.seed, replicate + 1)
    w, x, y = _draw(config, config.n + config.m, config.f_shift, rng)
    n = config.n
    return RegressionData(train_x, train_y, w[:n], x[:n], y[:n], w[n:], x[n:], y[n:])


def synth_regression(config: RegressionConfig, replicate: int = 0) -> RegressionData:
    """Train sample observed through ``f_train``, calibration and test through ``f_shift``.

    ``W ~ Unif(0, w_high)`` and ``Y | W ~ N(mean(W), sigma^2)``.
    """
    tx, ty = _draw_train(config)
    return _draw_cal_test(config, tx, ty, replicate)


class KnnPredictor:
    """k-nearest-neighbour mean on a fixed training set, optionally transported.

    With ``transfer=True`` each calibration/test covariate is first mapped to
    the training domain by matching its rank in the pooled calibration+test
    covariates to the same quantile of the training covariates. The map only
    sees the pooled sample as a set, so predictions are invariant under
    permutations of calibration+test points.
    """

    def __init__(self, train_x, train_y, k: int = 25):
        self.train_x = np.asarray(train_x, dtype=float)
        self.train_y = np.asarray(train_y, dtype=float)
        self.sorted_x = np.sort(self.train_x)
        self.k = k
        self._tree = cKDTree(self.train_x[:, None])

    def transport(self, pooled_x) -> np.ndarray:
        pooled_x = np.asarray(pooled_x, dtype=float)
        order = np.argsort(pooled_x, kind="stable")
        q = np.empty(pooled_x.size)
        q[order] = (np.arange(pooled_x.size) + 0.5) / pooled_x.size
        return np.quantile(self.sorted_x, q)

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        _, idx = self._tree.query(x[:, None], k=self.k)
        idx = idx.reshape(x.size, -1)
        return self.train_y[idx].mean(axis=1)

    def predict_pooled(self, pooled_x, transfer: bool) -> np.ndarray:
        z = self.transport(pooled_x) if transfer else np.asarray(pooled_x, dtype=float)
        return self.predict(z)


def centers_for(data: RegressionData, predictor: str, config: RegressionConfig, knn: KnnPredictor | None = None):
    """Point predictions on calibration and test covariates."""
    if predictor == "oracle":
        f = MEAN_FUNCTIONS[config.mean]
        return f(data.cal_w), f(data.test_w)
    if predictor not in PREDICTORS:
        raise ValueError(f"unknown predictor {predictor!r}")
    knn = knn or KnnPredictor(data.train_x, data.train_y, config.k_neighbors)
    pooled = np.concatenate([data.cal_x, data.test_x])
    mu = knn.predict_pooled(pooled, transfer=predictor == "transfer")
    return mu[: config.n], mu[config.n:]


@dataclass(frozen=True)
class FcpCurve:
    grid: np.ndarray
    fcp: np.ndarray
    bound_dkw: np.ndarray
    bound_simes: np.ndarray
    radius: np.ndarray


def fcp_curve(cal_scores, centers, outcomes, delta: float, levels=None, r: int = 3) -> FcpCurve:
    """Realised FCP and both uniform bounds on a set of levels (default: the full grid)."""
    cal_scores = np.asarray(cal_scores, dtype=float)
    n, m = cal_scores.size, np.asarray(centers).size
    if levels is None:
        levels = [Fraction(ell, n + 1) for ell in range(1, n + 2)]
    params = DkwParams(n, m, delta, r)
    fcps, dkw, simes, radii = [], [], [], []
    for a in levels:
        band = build_band(cal_scores, centers, a)
        fcps.append(float(fcp(band, outcomes)))
        dkw.append(fcp_bound_dkw(a, params))
        simes.append(fcp_bound_simes(a, delta, n))
        radii.append(band.radius)
    return FcpCurve(np.array([float(a) for a in levels]), np.array(fcps), np.array(dkw), np.array(simes), np.array(radii))


@dataclass
class PredictionReport:
    config: RegressionConfig
    predictor: str
    delta: float
    centers: np.ndarray = field(repr=False)
    radii: np.ndarray = field(repr=False)
    alpha_curve: FcpCurve = field(repr=False)
    radius_grid: np.ndarray = field(repr=False)
    radius_curve: FcpCurve = field(repr=False)


def prediction_report(
    config: RegressionConfig,
    predictor: str,
    delta: float,
    alphas: Sequence[float] | None = None,
    radii: Sequence[float] | None = None,
) -> PredictionReport:
    """FCP curves over a level grid and over a radius grid for one realisation."""
    data = synth_regression(config)
    mu_cal, mu_test = centers_for(data, predictor, config)
    s = np.abs(data.cal_y - mu_cal)
    if radii is None:
        radii = np.linspace(0, 1.2 * float(s.max()), 25)[1:]
    radii = np.asarray(radii, dtype=float)
    alpha_curve = fcp_curve(s, mu_test, data.test_y, delta, alphas)
    levels_l = [alpha_for_radius(s, L) for L in radii]
    radius_curve = fcp_curve(s, mu_test, data.test_y, delta, levels_l)
    return PredictionReport(config, predictor, delta, mu_test, alpha_curve.radius, alpha_curve, radii, radius_curve)


@dataclass(frozen=True)
class CoverageSummary:
    predictor: str
    reps: int
    delta: float
    violation_dkw: float
    violation_simes: float
    marginal_miscoverage: dict
    identity_holds: bool
    mc_sigma: float


def coverage_experiment(
    config: RegressionConfig,
    predictor: str,
    delta: float,
    reps: int,
    marginal_levels: Sequence[float] = (0.1, 0.2),
    r: int = 3,
) -> CoverageSummary:
    """Replicated check of the uniform FCP bounds and of marginal coverage.

    The training set is drawn once; calibration and test samples are redrawn
    per replicate. FCP is computed from the bands, independently of the
    p-values, and compared with the p-value ecdf on every replicate.
    """
    n, m = config.n, config.m
    train_x, train_y = _draw_train(config)
    knn = None if predictor == "oracle" else KnnPredictor(train_x, train_y, config.k_neighbors)
    lam = lambda_dkw(DkwParams(n, m, delta, r))
    ell = np.arange(1, n + 1)
    alpha = ell / (n + 1)
    bound_dkw = alpha + lam
    bound_simes = alpha / delta
    marg_idx = {a: grid_floor(a, n) for a in marginal_levels}
    viol_dkw = viol_simes = 0
    miss = {a: 0 for a in marginal_levels}
    identity = True
    for rep in range(reps):
        data = _draw_cal_test(config, train_x, train_y, rep)
        mu_cal, mu_test = centers_for(data, predictor, config, knn)
        s_cal = np.abs(data.cal_y - mu_cal)
        s_test = np.abs(data.test_y - mu_test)
        srt = np.sort(s_cal)
        radii = srt[n - ell]  # S_(n+1-l) for l = 1..n
        outside = s_test[:, None] > radii[None, :]
        fcp_grid = outside.mean(axis=0)
        viol_dkw += bool(np.any(fcp_grid > bound_dkw + 1e-12))
        viol_simes += bool(np.any(fcp_grid > bound_simes + 1e-12))
        for a, li in marg_idx.items():
            if li >= 1:
                miss[a] += int(outside[:, li - 1].sum())
        if identity and rep < 200:
            pv = conformal_pvalues(ScoreSet(s_cal, s_test))
            counts = rank_counts(pv.ranks[None, :], n)[0, :n]
            identity = bool(np.array_equal(counts, outside.sum(axis=0)))
    return CoverageSummary(
        predictor=predictor,
        reps=reps,
        delta=delta,
        violation_dkw=viol_dkw / reps,
        violation_simes=viol_simes / reps,
        marginal_miscoverage={a: miss[a] / (reps * m) for a in marginal_levels},
        identity_holds=identity,
        mc_sigma=math.sqrt(delta * (1 - delta) / reps),
    )
