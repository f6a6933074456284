"""Brute-force ground truth for small calibration/test sizes.

Exchangeable tie-free scores induce a uniform random ordering of the ``n+m``
points. Enumerating orderings and computing ranks directly gives the law of
the p-value vector with no reference to the urn formulas, which makes it an
independent check of everything in :mod:`transconf.polya`.

Two enumerations are available:

``"permutations"``
    every one of the ``(n+m)!`` score orderings, weight ``1/(n+m)!``;
``"placements"``
    ordered placements of the ``m`` test points among the ``n+m`` sorted
    slots (calibration points are interchangeable), weight ``n!/(n+m)!``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np

from . import bounds, polya, prediction
from ._grid import grid_floor
from .polya import Histogram, PolyaLaw
from .scores import sup_deviation_batch

SIZE_GUARD = 9
SIZE_CAP = 11
PLACEMENT_GUARD = 12
_CHUNK = 40_320


class OracleSizeError(ValueError):
    """Requested enumeration exceeds the size guard."""


@dataclass(frozen=True)
class ExactLaw:
    """Exact law of the rank vector.

    Trajectory ``trajectories[i]`` has probability ``counts[i] / denominator``.
    ``probs`` gives the same law as a mapping to :class:`~fractions.Fraction`.
    """

    n: int
    m: int
    trajectories: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    denominator: int
    method: str = "permutations"

    @cached_property
    def probs(self) -> Mapping[tuple[int, ...], Fraction]:
        return MappingProxyType({
            tuple(j): Fraction(int(c), self.denominator)
            for j, c in zip(self.trajectories.tolist(), self.counts.tolist())
        })

    def total(self) -> Fraction:
        return Fraction(int(self.counts.sum()), self.denominator)

    def __len__(self) -> int:
        return self.counts.size

    def items(self):
        return self.probs.items()

    def pushforward(self, f: Callable[[tuple[int, ...]], object]) -> dict:
        out: dict = {}
        for j, c in zip(self.trajectories.tolist(), self.counts.tolist()):
            key = f(tuple(j))
            out[key] = out.get(key, 0) + c
        return {k: Fraction(v, self.denominator) for k, v in out.items()}

    @cached_property
    def order_statistic_counts(self) -> np.ndarray:
        """``C[k-1, l-1]`` = numerator of ``P(p_(k) = l/(n+1))``."""
        srt = np.sort(self.trajectories, axis=1)
        out = np.zeros((self.m, self.n + 1), dtype=np.int64)
        for k in range(self.m):
            np.add.at(out[k], srt[:, k] - 1, self.counts)
        return out


def _guard(n: int, m: int, method: str, override: bool):
    if n < 1 or m < 1:
        raise ValueError("need n >= 1 and m >= 1")
    size = n + m
    if method == "permutations":
        limit = SIZE_CAP if override else SIZE_GUARD
        if size > limit:
            raise OracleSizeError(f"n+m={size} exceeds the enumeration guard {limit}")
    elif method == "placements":
        if size > PLACEMENT_GUARD:
            raise OracleSizeError(f"n+m={size} exceeds the placement guard {PLACEMENT_GUARD}")
    else:
        raise ValueError(f"unknown enumeration method {method!r}")


def _resolve(n: int, m: int, method: str) -> str:
    if method != "auto":
        return method
    return "permutations" if n + m <= SIZE_GUARD else "placements"


def _encode(ranks: np.ndarray, n: int) -> np.ndarray:
    base = (n + 1) ** np.arange(ranks.shape[1], dtype=np.int64)
    return (ranks - 1) @ base


def _decode(code: int, n: int, m: int) -> tuple[int, ...]:
    out = []
    for _ in range(m):
        code, d = divmod(code, n + 1)
        out.append(d + 1)
    return tuple(out)


def _count_permutations(n: int, m: int) -> Counter:
    size = n + m
    counts: Counter = Counter()
    perms = itertools.permutations(range(size))
    while True:
        flat = np.fromiter(itertools.chain.from_iterable(itertools.islice(perms, _CHUNK)), dtype=np.int64)
        if flat.size == 0:
            return counts
        arr = flat.reshape(-1, size)
        cal, test = arr[:, :n], arr[:, n:]
        # rank = 1 + #{calibration scores >= test score}; no ties
        ranks = 1 + np.sum(cal[:, :, None] > test[:, None, :], axis=1)
        codes, c = np.unique(_encode(ranks, n), return_counts=True)
        counts.update(dict(zip(codes.tolist(), c.tolist())))


def _count_placements(n: int, m: int) -> Counter:
    counts: Counter = Counter()
    orders = np.array(list(itertools.permutations(range(m))), dtype=np.int64)
    for slots in itertools.combinations(range(n + m), m):
        # slot 0 holds the largest score; the k-th test slot from the top has
        # slot - k calibration points above it
        desc = 1 + np.array(slots) - np.arange(m)
        ranks = np.empty_like(orders)
        np.put_along_axis(ranks, orders, np.broadcast_to(desc, orders.shape), axis=1)
        codes, c = np.unique(_encode(ranks, n), return_counts=True)
        counts.update(dict(zip(codes.tolist(), c.tolist())))
    return counts


@lru_cache(maxsize=128)
def _enumerate(n: int, m: int, method: str) -> ExactLaw:
    if method == "permutations":
        counts, total = _count_permutations(n, m), math.factorial(n + m)
    else:
        counts, total = _count_placements(n, m), math.factorial(n + m) // math.factorial(n)
    codes = sorted(counts)
    traj = np.array([_decode(code, n, m) for code in codes], dtype=np.int64).reshape(-1, m)
    weights = np.array([counts[code] for code in codes], dtype=np.int64)
    return ExactLaw(n, m, traj, weights, total, method)


def enumerate_law(n: int, m: int, method: str = "permutations", override: bool = False) -> ExactLaw:
    """Exact law of the rank vector by exhaustive enumeration.

    ``method="permutations"`` needs ``n+m <= 9`` (``override=True`` lifts the
    guard to 11). ``method="auto"`` falls back to placements above 9.
    """
    method = _resolve(n, m, method)
    _guard(n, m, method, override)
    return _enumerate(int(n), int(m), method)


def histogram_law(law: ExactLaw) -> dict[tuple[int, ...], Fraction]:
    return law.pushforward(lambda j: Histogram.of(j, law.n).bins)


def count_law(law: ExactLaw, alpha) -> dict[int, Fraction]:
    """Law of ``m F_m(alpha)``, the number of p-values ``<= alpha``."""
    ell = grid_floor(alpha, law.n)
    k = np.sum(law.trajectories <= ell, axis=1)
    return {int(i): Fraction(int(law.counts[k == i].sum()), law.denominator) for i in np.unique(k)}


def indicator_law(law: ExactLaw, alpha) -> dict[tuple[int, ...], Fraction]:
    """Law of the sequence ``1{p_i > alpha}``, ``i = 1..m``."""
    ell = grid_floor(alpha, law.n)
    z = (law.trajectories > ell).astype(np.int64)
    codes = z @ (2 ** np.arange(law.m, dtype=np.int64))
    out = {}
    for code in np.unique(codes).tolist():
        key = tuple((code >> i) & 1 for i in range(law.m))
        out[key] = Fraction(int(law.counts[codes == code].sum()), law.denominator)
    return out


def exact_sup_deviation_law(n: int, m: int, method: str = "auto") -> dict[Fraction, Fraction]:
    """Law of ``sup_t (F_m(t) - I_n(t))`` as a map from exact value to probability."""
    law = enumerate_law(n, m, method)
    num = sup_deviation_batch(law.trajectories, n)
    out = {}
    for v in np.unique(num).tolist():
        out[Fraction(v, m * (n + 1))] = Fraction(int(law.counts[num == v].sum()), law.denominator)
    return out


def exact_sup_tail(n: int, m: int, lam) -> Fraction:
    """``P(sup_t (F_m(t) - I_n(t)) > lam)``."""
    lam = Fraction(lam) if not isinstance(lam, float) else lam
    return sum((p for v, p in exact_sup_deviation_law(n, m).items() if v > lam), Fraction(0))


def exact_order_statistic_cdf(n: int, m: int, k: int, t, method: str = "auto") -> Fraction:
    """``P(p_(k) <= t)`` by enumeration; ``t`` is snapped down to the grid."""
    if not 1 <= k <= m:
        raise ValueError(f"k must lie in [1, {m}]")
    law = enumerate_law(n, m, method)
    ell = min(max(grid_floor(t, n), 0), n + 1)
    return Fraction(int(law.order_statistic_counts[k - 1, :ell].sum()), law.denominator)


# -- verification suite -----------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    instances: int
    failures: int

    @property
    def passed(self) -> bool:
        return self.failures == 0


def _sizes(max_size: int, limit: int | None = None):
    top = max_size if limit is None else min(max_size, limit)
    return [(n, s - n) for s in range(2, top + 1) for n in range(1, s)]


MARQUES_ALPHAS = (Fraction(1, 10), Fraction(3, 10), Fraction(1, 2), Fraction(9, 10))
LEVEL_DELTAS = (Fraction(1, 10), Fraction(1, 5), Fraction(1, 2))


def verify_suite(max_size: int = SIZE_GUARD, pmf_hook: Callable[[Fraction], Fraction] | None = None) -> list[CheckResult]:
    """Run every exact-equality check on all sizes up to ``max_size``.

    ``pmf_hook`` perturbs the closed-form joint pmf before comparison; it
    exists so that tests can confirm the suite actually detects faults.
    """
    if max_size > SIZE_CAP:
        raise OracleSizeError(f"max_size must be <= {SIZE_CAP}")
    override = max_size > SIZE_GUARD
    hook = pmf_hook or (lambda p: p)
    results = []

    def run(name, items, check):
        inst = fail = 0
        for item in items:
            inst += 1
            fail += not check(*item)
        results.append(CheckResult(name, inst, fail))

    laws = {nm: enumerate_law(*nm, override=override) for nm in _sizes(max_size)}

    run("total mass is 1", [(law,) for law in laws.values()], lambda law: law.total() == 1)

    def joint(law):
        # trajectories missing from the enumeration carry closed-form mass too
        pl = PolyaLaw(law.n, law.m)
        ok = all(hook(polya.joint_pmf(pl, j, exact=True)) == p for j, p in law.items())
        return ok and len(law) == (law.n + 1) ** law.m

    run("joint pmf equals enumeration", [(law,) for law in laws.values()], joint)

    def hist(law):
        target = Fraction(1, math.comb(law.n + law.m, law.m))
        h = histogram_law(law)
        return len(h) == math.comb(law.n + law.m, law.m) and all(p == target for p in h.values())

    run("histograms are uniform", [(law,) for law in laws.values()], hist)

    def chain(law):
        pl = PolyaLaw(law.n, law.m)
        for j, p in law.items():
            prod = Fraction(1)
            for i in range(law.m):
                prod *= polya.sequential_pmf(pl, j[:i], j[i])
            if prod != p:
                return False
        return True

    run("chain rule of sequential draws", [(law,) for nm, law in laws.items() if sum(nm) <= 8], chain)

    def conditional(law):
        pl = PolyaLaw(law.n, law.m)
        h = histogram_law(law)
        return all(p / h[Histogram.of(j, law.n).bins] == polya.trajectory_conditional_pmf(pl, j) for j, p in law.items())

    run("trajectory uniform given histogram", [(law,) for law in laws.values()], conditional)

    small = [(n, m) for n in range(1, 7) for m in range(1, 7)]
    laws.update({nm: enumerate_law(*nm, method="auto") for nm in small if nm not in laws})

    def marques(n, m, a):
        pl = PolyaLaw(n, m)
        cl = count_law(laws[(n, m)], a)
        pmf = [polya.ecdf_count_pmf(pl, a, k, exact=True) for k in range(m + 1)]
        return sum(pmf) == 1 and all(pmf[k] == cl.get(k, 0) for k in range(m + 1))

    run("count law closed form", [(n, m, a) for n, m in small for a in MARQUES_ALPHAS], marques)

    def two_color(n, m, a):
        pl = PolyaLaw(n, m)
        for z, p in indicator_law(laws[(n, m)], a).items():
            prod = Fraction(1)
            for i in range(m):
                prod *= polya.two_color_sequential(pl, a, z[:i])[z[i]]
            if prod != p:
                return False
        return True

    run("two-colour urn pushforward", [(n, m, a) for n, m in small for a in MARQUES_ALPHAS], two_color)

    def order_stat(n, m):
        pl = PolyaLaw(n, m)
        for k in range(1, m + 1):
            for ell in range(0, n + 2):
                t = Fraction(ell, n + 1)
                if exact_order_statistic_cdf(n, m, k, t) != prediction.order_statistic_cdf(pl, k, ell):
                    return False
        return True

    run("order statistic cdf", small, order_stat)

    def level(n, m, d):
        pl = PolyaLaw(n, m)
        for target in (Fraction(k, m) for k in range(m)):
            t = prediction.calibrate_level(pl, target, d)
            k = int(target * m) + 1
            if exact_order_statistic_cdf(n, m, k, t) > d:
                return False
            nxt = t + Fraction(1, n + 1)
            if nxt <= 1 and exact_order_statistic_cdf(n, m, k, nxt) <= d:
                return False
        t0 = prediction.level_zero_explicit(n, m, d)
        return t0 == prediction.calibrate_level(pl, 0, d)

    run("level calibration", [(n, m, d) for n, m in small for d in LEVEL_DELTAS], _quiet(level))

    def dkw_dominates(n, m):
        dev = exact_sup_deviation_law(n, m)
        for i in range(1, 20):
            lam = Fraction(i, 20)
            tail = sum((p for v, p in dev.items() if v > lam), Fraction(0))
            if tail > bounds.b_dkw(float(lam), n, m) + 1e-12:
                return False
        return True

    run("DKW bound dominates exact tail", list(laws), dkw_dominates)
    return results


def _quiet(fn):
    def wrapped(*args):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return fn(*args)

    return wrapped


def format_report(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  instances  failures  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.instances:>9}  {r.failures:>8}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
