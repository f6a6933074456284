import math

import numpy as np
import pytest

from transconf.polya import PolyaLaw, sample_urn
from transconf.templates import (
    beta_template,
    calibrate_template,
    coverage_statistic,
    default_beta_k_set,
    envelope_violations,
    inverse_table,
    linear_template,
    make_template,
)

LAMS = np.round(np.arange(1, 100) / 100, 2)


def test_linear_examples():
    t = linear_template(7)
    assert t.forward(7, 1.0) == 1
    assert t.inverse(1, 1 / 7) == pytest.approx(1)
    for k in t.k_set:
        assert t.inverse(k, t.forward(k, 0.37)) == pytest.approx(0.37, abs=1e-15)
        assert t.forward(k, 0) == 0


def test_beta_examples():
    t = beta_template(1)
    assert t.k_set == (1,)
    for lam in (0.1, 0.5, 0.9):
        assert t.forward(1, lam) == pytest.approx(lam, abs=1e-12)


def test_beta_increasing_in_k_and_round_trip():
    m = 40
    t = beta_template(m, k_set=range(1, m + 1))
    for lam in (0.05, 0.3, 0.7, 0.95):
        th = t.thresholds(lam)
        assert np.all(np.diff(th) > 0)
    for k in default_beta_k_set(m):
        assert beta_template(m).forward(k, 0) == 0
        for lam in LAMS:
            assert t.inverse(k, t.forward(k, lam)) == pytest.approx(lam, abs=1e-8)


def test_default_beta_k_set():
    assert default_beta_k_set(50) == tuple(range(1, 51, 4))
    assert default_beta_k_set(1) == (1,)


def test_template_validation():
    with pytest.raises(ValueError):
        linear_template(5, [0, 2])
    with pytest.raises(ValueError):
        linear_template(5, [6])
    with pytest.raises(ValueError):
        make_template("cubic", 5)
    with pytest.raises(ValueError):
        linear_template(0)


def test_calibration_hand_case():
    law = PolyaLaw(1, 1)
    env = calibrate_template(law, linear_template(1), delta=0.7, seed=1, reps=4000)
    assert env.lambda_star == 0.5 and not env.vacuous
    with pytest.warns(UserWarning, match="vacuous"):
        env = calibrate_template(law, linear_template(1), delta=0.3, seed=1, reps=4000)
    assert env.lambda_star == 0 and env.vacuous


def test_calibration_validation():
    law = PolyaLaw(5, 5)
    with pytest.raises(ValueError):
        calibrate_template(law, linear_template(5), 0.2, 0, reps=10)
    with pytest.raises(ValueError):
        calibrate_template(law, linear_template(6), 0.2, 0, reps=2000)
    with pytest.raises(ValueError):
        calibrate_template(law, linear_template(5), 1.2, 0, reps=2000)
    with pytest.raises(ValueError):
        calibrate_template(law, linear_template(5), 0.2, 0, reps=2000, index="k+2")


@pytest.mark.parametrize("kind", ["linear", "beta"])
def test_lambda_star_in_candidates(kind):
    law = PolyaLaw(20, 15)
    tmpl = make_template(kind, 15)
    env = calibrate_template(law, tmpl, 0.2, seed=2, reps=3000)
    table = inverse_table(tmpl, 20)
    assert np.any(np.isclose(table, env.lambda_star, rtol=0, atol=0))


@pytest.mark.parametrize("kind", ["linear", "beta"])
def test_lambda_star_monotone_in_delta(kind):
    law = PolyaLaw(20, 20)
    tmpl = make_template(kind, 20)
    lams = [calibrate_template(law, tmpl, d, seed=3, reps=5000).lambda_star for d in (0.05, 0.1, 0.2, 0.5, 0.9)]
    assert lams == sorted(lams)


def test_large_delta_nontrivial():
    law = PolyaLaw(20, 20)
    tmpl = linear_template(20)
    env = calibrate_template(law, tmpl, 0.95, seed=3, reps=5000)
    assert env.lambda_star > 0 and not env.vacuous
    w = coverage_statistic(tmpl, inverse_table(tmpl, 20), sample_urn(law, 3, 5000))
    # the largest candidate kept at least ceil(0.05 R) statistics strictly above it
    assert np.sum(w > env.lambda_star) >= math.ceil(0.05 * 5000)


@pytest.mark.parametrize("index", ["k", "k+1"])
@pytest.mark.parametrize("kind", ["linear", "beta"])
def test_fresh_seed_coverage(kind, index):
    law = PolyaLaw(30, 30)
    delta, reps = 0.2, 5000
    env = calibrate_template(law, make_template(kind, 30), delta, seed=10, reps=reps, index=index)
    fresh = sample_urn(law, seed=11, reps=reps)
    bad = env.violated(fresh) if index == "k+1" else _strict_violation(env, fresh)
    assert bad.mean() <= delta + 4 * math.sqrt(delta * (1 - delta) / reps)


def _strict_violation(env, ranks):
    # with the p_(k) index the guarantee is F_m(t_k) <= (k-1)/m
    ks = np.array(env.template.k_set) - 1
    return envelope_violations(tuple(ks), env.thresholds, ranks, env.n)


def test_violation_uses_grid_counts():
    tmpl = linear_template(2)
    env = calibrate_template(PolyaLaw(3, 2), tmpl, 0.5, seed=0, reps=2000)
    ranks = np.array([[1, 1], [4, 4]])
    assert env.violated(ranks).shape == (2,)
    assert not env.violated(ranks)[1]
