"""Split-conformal p-values from calibration and test nonconformity scores.

p-values are kept as integer ranks on the grid ``{1, ..., n+1}``; the real
p-value of test point ``i`` is ``ranks[i] / (n+1)``. All comparisons against
grid thresholds are therefore integer comparisons.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from ._grid import grid_floor

DEFAULT_FLOOR_GAP = 1e-12


class ScoreError(ValueError):
    """Invalid score input (non-finite values, empty blocks)."""


class TieError(ScoreError):
    """Scores contain ties that were not (or could not be) broken."""


class ScoreFormatError(ScoreError):
    """Malformed score CSV; the message carries the offending line number."""


class EmptySectionError(ScoreFormatError):
    """A score file has no calibration or no test rows."""


@dataclass(frozen=True)
class ScoreSet:
    calibration: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        cal = np.asarray(self.calibration, dtype=float).ravel()
        test = np.asarray(self.test, dtype=float).ravel()
        if cal.size < 1 or test.size < 1:
            raise ScoreError("need at least one calibration and one test score")
        if not (np.all(np.isfinite(cal)) and np.all(np.isfinite(test))):
            raise ScoreError("scores must be finite (NaN and infinities are rejected)")
        cal.setflags(write=False)
        test.setflags(write=False)
        object.__setattr__(self, "calibration", cal)
        object.__setattr__(self, "test", test)

    @property
    def n(self) -> int:
        return self.calibration.size

    @property
    def m(self) -> int:
        return self.test.size

    def has_ties(self) -> bool:
        allv = np.concatenate([self.calibration, self.test])
        return np.unique(allv).size != allv.size


@dataclass(frozen=True)
class PValueSet:
    n: int
    ranks: np.ndarray

    def __post_init__(self):
        ranks = np.asarray(self.ranks, dtype=np.int64).ravel()
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if ranks.size < 1:
            raise ValueError("need at least one p-value")
        if ranks.min() < 1 or ranks.max() > self.n + 1:
            raise ValueError(f"ranks must lie in [1, {self.n + 1}]")
        ranks.setflags(write=False)
        object.__setattr__(self, "ranks", ranks)

    @property
    def m(self) -> int:
        return self.ranks.size

    @property
    def values(self) -> np.ndarray:
        """Floating-point p-values (for display only)."""
        return self.ranks / (self.n + 1)

    def fractions(self) -> list[Fraction]:
        return [Fraction(int(r), self.n + 1) for r in self.ranks]


@dataclass(frozen=True)
class EcdfStep:
    """Empirical distribution function of p-values on the (n+1)-grid.

    ``counts[l-1] = #{i : p_i <= l/(n+1)}`` for ``l = 1..n+1``.
    """

    n: int
    m: int
    counts: np.ndarray = field(repr=False)

    def __call__(self, t) -> Fraction:
        ell = min(max(grid_floor(t, self.n), 0), self.n + 1)
        c = 0 if ell == 0 else int(self.counts[ell - 1])
        return Fraction(c, self.m)


def break_ties(scores: ScoreSet, seed: int, floor_gap: float = DEFAULT_FLOOR_GAP) -> ScoreSet:
    """Add seeded uniform noise small enough to keep every strict order.

    The noise lives on ``(-g/2, g/2)`` with ``g`` a quarter of the smallest
    nonzero gap between scores, or ``floor_gap`` when all scores coincide.
    """
    allv = np.concatenate([scores.calibration, scores.test])
    distinct = np.unique(allv)
    if distinct.size > 1:
        g = np.min(np.diff(distinct)) / 4
    else:
        if floor_gap <= 0:
            raise TieError("all scores are identical and the noise floor is disabled")
        # an absolute floor below float resolution would leave ties in place
        g = max(floor_gap, 64 * float(np.spacing(np.abs(distinct[0]))))
    rng = np.random.default_rng(seed)
    for _ in range(100):
        noisy = allv + rng.uniform(-g / 2, g / 2, size=allv.size)
        if np.unique(noisy).size == noisy.size:
            return ScoreSet(noisy[: scores.n], noisy[scores.n:])
    raise TieError("could not break ties")  # pragma: no cover


def conformal_pvalues(scores: ScoreSet) -> PValueSet:
    """Rank ``1 + #{j <= n : S_j >= S_{n+i}}`` of every test score."""
    if scores.has_ties():
        raise TieError("scores contain ties; call break_ties first")
    cal = np.sort(scores.calibration)
    below = np.searchsorted(cal, scores.test, side="left")
    return PValueSet(scores.n, 1 + scores.n - below)


def ecdf(pvals: PValueSet) -> EcdfStep:
    hist = np.bincount(pvals.ranks, minlength=pvals.n + 2)[1:]
    return EcdfStep(pvals.n, pvals.m, np.cumsum(hist))


def sup_deviation(e: EcdfStep) -> Fraction:
    """Exact ``sup_t (F_m(t) - I_n(t))``.

    Both step functions are constant between grid points, so the supremum is
    the maximum over ``l = 0..n+1`` (the ``l = 0`` term is 0).
    """
    n1 = e.n + 1
    num = int(np.max(e.counts * n1 - np.arange(1, n1 + 1) * e.m))
    return max(Fraction(0), Fraction(num, e.m * n1))


def sup_deviation_batch(ranks: np.ndarray, n: int) -> np.ndarray:
    """Integer numerators of the sup deviation for each row of ``ranks``.

    Row ``r`` has deviation ``out[r] / (m * (n+1))``.
    """
    ranks = np.asarray(ranks)
    m = ranks.shape[1]
    counts = rank_counts(ranks, n)
    n1 = n + 1
    num = counts * n1 - np.arange(1, n1 + 1) * m
    return np.maximum(num.max(axis=1), 0)


def rank_counts(ranks: np.ndarray, n: int) -> np.ndarray:
    """Cumulative counts ``#{i : rank <= l}`` for ``l = 1..n+1``, one row per replicate."""
    ranks = np.asarray(ranks, dtype=np.int64)
    reps = ranks.shape[0]
    n1 = n + 1
    offsets = (np.arange(reps) * n1)[:, None]
    hist = np.bincount((ranks - 1 + offsets).ravel(), minlength=reps * n1)
    return np.cumsum(hist.reshape(reps, n1), axis=1)


def read_scores_csv(path, test_path=None) -> ScoreSet:
    """Read scores from CSV.

    With one file, columns ``score`` and ``role`` (``cal`` or ``test``) are
    required. With two files, each needs a ``score`` column and the second
    holds the test block.
    """
    if test_path is None:
        rows = _read_rows(path, ("score", "role"))
        cal, test = [], []
        for lineno, row in rows:
            role = row["role"].strip().lower()
            if role not in ("cal", "test"):
                raise ScoreFormatError(f"{path}:{lineno}: role must be 'cal' or 'test', got {row['role']!r}")
            (cal if role == "cal" else test).append(_parse_score(row["score"], path, lineno))
    else:
        cal = [_parse_score(r["score"], path, ln) for ln, r in _read_rows(path, ("score",))]
        test = [_parse_score(r["score"], test_path, ln) for ln, r in _read_rows(test_path, ("score",))]
    if not cal:
        raise EmptySectionError(f"{path}: no calibration scores")
    if not test:
        raise EmptySectionError(f"{test_path or path}: no test scores")
    return ScoreSet(np.array(cal), np.array(test))


def _read_rows(path, required):
    with open(Path(path), newline="") as fh:
        lines = [(i, ln) for i, ln in enumerate(fh, start=1) if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise EmptySectionError(f"{path}: empty file")
    header_line, header = lines[0][0], next(csv.reader([lines[0][1]]))
    header = [h.strip() for h in header]
    missing = [c for c in required if c not in header]
    if missing:
        raise ScoreFormatError(f"{path}:{header_line}: missing column(s) {', '.join(missing)}")
    out = []
    for lineno, text in lines[1:]:
        values = next(csv.reader([text]))
        if len(values) != len(header):
            raise ScoreFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(values)}")
        out.append((lineno, dict(zip(header, values))))
    return out


def _parse_score(text, path, lineno) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ScoreFormatError(f"{path}:{lineno}: cannot parse score {text!r}") from None
    if not np.isfinite(value):
        raise ScoreFormatError(f"{path}:{lineno}: score must be finite, got {text!r}")
    return value
