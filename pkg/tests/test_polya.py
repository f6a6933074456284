import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from transconf import oracle
from transconf.polya import (
    Histogram,
    PolyaLaw,
    PseudoScoreVector,
    ecdf_count_pmf,
    histogram_pmf,
    joint_pmf,
    marques_k0,
    sample_given_u,
    sample_representation,
    sample_urn,
    sequential_pmf,
    trajectory_conditional_pmf,
    two_color_sequential,
)


def trajectories(n, m):
    return itertools.product(range(1, n + 2), repeat=m)


def test_law_validation():
    with pytest.raises(ValueError):
        PolyaLaw(0, 3)
    with pytest.raises(ValueError):
        PolyaLaw(3, 0)


def test_joint_pmf_examples():
    law = PolyaLaw(1, 2)
    assert joint_pmf(law, (1, 1)) == Fraction(1, 3)
    assert joint_pmf(law, (1, 2)) == Fraction(1, 6)
    for n in range(1, 6):
        for j in range(1, n + 2):
            assert joint_pmf(PolyaLaw(n, 1), (j,)) == Fraction(1, n + 1)


def test_joint_pmf_rejects_bad_trajectories():
    law = PolyaLaw(2, 2)
    with pytest.raises(ValueError):
        joint_pmf(law, (1,))
    with pytest.raises(ValueError):
        joint_pmf(law, (1, 4))


@pytest.mark.parametrize("n,m", [(1, 1), (2, 3), (3, 3), (4, 5)])
def test_joint_pmf_sums_to_one(n, m):
    assert sum(joint_pmf(PolyaLaw(n, m), j) for j in trajectories(n, m)) == 1


def test_log_space_agrees_with_exact():
    law = PolyaLaw(12, 7)
    j = (1, 1, 3, 5, 5, 5, 13)
    assert joint_pmf(law, j, exact=False) == pytest.approx(float(joint_pmf(law, j, exact=True)), rel=1e-10)
    big = PolyaLaw(200, 50)
    assert isinstance(joint_pmf(big, [1] * 50), float)
    for k in (0, 7, 50):
        e = ecdf_count_pmf(big, 0.3, k, exact=True)
        assert ecdf_count_pmf(big, 0.3, k) == pytest.approx(float(e), rel=1e-10, abs=1e-300)


@given(st.integers(1, 6), st.lists(st.integers(1, 7), min_size=1, max_size=6), st.randoms())
def test_joint_pmf_exchangeable(n, raw, rnd):
    j = [1 + (x - 1) % (n + 1) for x in raw]
    law = PolyaLaw(n, len(j))
    k = list(j)
    rnd.shuffle(k)
    assert joint_pmf(law, j) == joint_pmf(law, k)


def test_sequential_examples():
    assert all(sequential_pmf(PolyaLaw(4, 2), [], c) == Fraction(1, 5) for c in range(1, 6))
    assert sequential_pmf(PolyaLaw(5, 6), [3], 3) == Fraction(2, 7)
    law = PolyaLaw(5, 6)
    hist = [2, 2, 4, 2]
    assert sequential_pmf(law, hist, 2) == Fraction(1 + 3, 5 + 1 + 4)


def test_chain_rule_n2_m3():
    law = PolyaLaw(2, 3)
    for j in trajectories(2, 3):
        prod = math.prod(sequential_pmf(law, j[:i], j[i]) for i in range(3))
        assert prod == joint_pmf(law, j)


def test_histogram_examples():
    assert histogram_pmf(PolyaLaw(1, 5), Histogram((2, 3))) == Fraction(1, 6)
    for h in [(2, 0, 0), (1, 1, 0), (0, 1, 1)]:
        assert histogram_pmf(PolyaLaw(2, 2), Histogram(h)) == Fraction(1, 6)
    with pytest.raises(ValueError):
        histogram_pmf(PolyaLaw(2, 2), Histogram((1, 1)))
    with pytest.raises(ValueError):
        histogram_pmf(PolyaLaw(2, 2), Histogram((1, 0, 0)))


def compositions(m, parts):
    for cut in itertools.combinations(range(m + parts - 1), parts - 1):
        bounds = (-1,) + cut + (m + parts - 1,)
        yield tuple(b - a - 1 for a, b in zip(bounds, bounds[1:]))


@pytest.mark.parametrize("n,m", [(n, m) for n in range(1, 7) for m in range(1, 7)])
def test_histogram_masses_sum_to_one(n, m):
    law = PolyaLaw(n, m)
    comps = list(compositions(m, n + 1))
    assert len(comps) == math.comb(n + m, m)
    assert sum(histogram_pmf(law, Histogram(h)) for h in comps) == 1


def test_trajectory_conditional_examples():
    law = PolyaLaw(5, 4)
    assert trajectory_conditional_pmf(law, (1, 2, 3, 4)) == Fraction(1, 24)
    assert trajectory_conditional_pmf(law, (2, 2, 2, 2)) == 1


@pytest.mark.parametrize("n,m", [(n, m) for n in range(1, 6) for m in range(1, 6) if n + m <= 8])
def test_trajectory_conditional_identity(n, m):
    law = PolyaLaw(n, m)
    for j in trajectories(n, m):
        h = Histogram.of(j, n)
        assert trajectory_conditional_pmf(law, j) == joint_pmf(law, j) / histogram_pmf(law, h)


def test_ecdf_count_examples():
    law = PolyaLaw(1, 1)
    assert marques_k0(0.5, 1) == 1
    assert ecdf_count_pmf(law, 0.5, 0) == Fraction(1, 2)
    assert ecdf_count_pmf(law, 0.5, 1) == Fraction(1, 2)


@pytest.mark.parametrize("n,m", [(n, m) for n in range(1, 9) for m in range(1, 9)])
def test_ecdf_count_normalised(n, m):
    law = PolyaLaw(n, m)
    for a in (0.05, 0.3, 0.5, 0.77, 0.95):
        assert sum(ecdf_count_pmf(law, a, k) for k in range(m + 1)) == 1


def test_ecdf_count_grid_boundary():
    # on the grid the floor and ceiling conventions coincide
    assert marques_k0(Fraction(2, 5), 4) == 2
    assert marques_k0(0.4, 4) == 2
    assert marques_k0(0.1, 4) == 0
    law = PolyaLaw(4, 3)
    assert ecdf_count_pmf(law, 0.1, 0) == 1


@pytest.mark.parametrize("alpha", [0.05, 0.8, 0.9])
def test_ecdf_count_against_monte_carlo(alpha):
    law = PolyaLaw(9, 5)
    reps = 50_000
    ranks = sample_urn(law, seed=11, reps=reps)
    ell = int(np.floor(alpha * 10 + 1e-9))
    k = np.sum(ranks <= ell, axis=1)
    freq = np.bincount(k, minlength=6) / reps
    for kk in range(6):
        p = float(ecdf_count_pmf(law, alpha, kk))
        assert abs(freq[kk] - p) <= 4 * math.sqrt(p * (1 - p) / reps) + 1e-12


def test_two_color_examples():
    law = PolyaLaw(1, 2)
    assert two_color_sequential(law, 0.5, []) == (Fraction(1, 2), Fraction(1, 2))
    law = PolyaLaw(3, 3)
    for a in (0.2, 0.5, 0.75):
        for i in range(3):
            for hist in itertools.product((0, 1), repeat=i):
                p0, p1 = two_color_sequential(law, a, hist)
                assert p0 + p1 == 1
    ind = oracle.indicator_law(oracle.enumerate_law(3, 3), 0.5)
    for z, p in ind.items():
        prod = math.prod(two_color_sequential(law, 0.5, z[:i])[z[i]] for i in range(3))
        assert prod == p


def test_pseudo_score_atoms_and_cdf():
    u = PseudoScoreVector([0.9, 0.2])
    assert np.allclose(u.atoms(), [0.2, 0.7, 0.1])
    assert u.cdf(0.0) == 0.0 and u.cdf(1 / 3) == pytest.approx(0.2) and u.cdf(1.0) == 1.0
    with pytest.raises(ValueError):
        PseudoScoreVector([1.5])


def test_sample_given_u():
    reps = 100_000
    r = sample_given_u(PseudoScoreVector([0.3]), 1, seed=4, reps=reps)[:, 0]
    sd = 4 * math.sqrt(0.21 / reps)
    assert abs(np.mean(r == 1) - 0.3) <= sd
    assert abs(np.mean(r == 2) - 0.7) <= sd


def test_urn_first_draw_uniform():
    reps = 100_000
    r = sample_urn(PolyaLaw(1, 1), seed=2, reps=reps)[:, 0]
    assert abs(np.mean(r == 1) - 0.5) <= 4 * math.sqrt(0.25 / reps)


def test_urn_tie_probability():
    reps = 100_000
    r = sample_urn(PolyaLaw(1, 2), seed=3, reps=reps)
    p = 2 / 3
    assert abs(np.mean(r[:, 0] == r[:, 1]) - p) <= 4 * math.sqrt(p * (1 - p) / reps)


@pytest.mark.parametrize("sampler", [sample_urn, sample_representation])
def test_samplers_match_exact_law(sampler):
    law = PolyaLaw(2, 2)
    reps = 200_000
    r = sampler(law, seed=9, reps=reps)
    codes = (r[:, 0] - 1) * 3 + (r[:, 1] - 1)
    freq = np.bincount(codes, minlength=9) / reps
    for j in trajectories(2, 2):
        p = float(joint_pmf(law, j))
        c = (j[0] - 1) * 3 + (j[1] - 1)
        assert abs(freq[c] - p) <= 5 * math.sqrt(p * (1 - p) / reps)


def test_samplers_are_deterministic_and_in_range():
    law = PolyaLaw(7, 5)
    for sampler in (sample_urn, sample_representation):
        a = sampler(law, seed=1, reps=5000)
        b = sampler(law, seed=1, reps=5000)
        assert np.array_equal(a, b)
        assert a.shape == (5000, 5) and a.min() >= 1 and a.max() <= 8
        assert not np.array_equal(a, sampler(law, seed=2, reps=5000))


def test_block_structure_does_not_change_prefix():
    law = PolyaLaw(3, 4)
    a = sample_urn(law, seed=5, reps=10_000)
    b = sample_urn(law, seed=5, reps=5000)
    assert np.array_equal(a[:4096], b[:4096])
