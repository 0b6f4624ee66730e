import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bri import ConstantEffect, GaussianShift, validate_study
from bri.errors import (DegenerateProbability, EmptyGroup, IncompatibleStatistic, SingularDesign,
                        ZeroVariance)
from bri.statistics import (DIM, GroupMean1, MomentVector, OLSModeration, RankSum,
                            S12Pair, SlopeDifference, Stack, check_compatible, d_delta0, dim,
                            dr_pseudo_outcomes, group_means, group_variance_stats, hajek_stat,
                            ipw_pseudo_outcomes, ipw_stat, make_statistic, ols_moderation_stat,
                            rank_sum, std_moments)

outcomes = st.floats(-1e3, 1e3, allow_nan=False)


def _study(draw_pairs):
    a = np.array([p[0] for p in draw_pairs])
    y = np.array([p[1] for p in draw_pairs])
    return validate_study(a, y)


two_group_rows = st.lists(st.tuples(st.integers(0, 1), outcomes), min_size=4, max_size=20).filter(
    lambda rows: 2 <= sum(r[0] for r in rows) <= len(rows) - 2)


def test_group_means_example(example_study):
    s0, s1 = group_means(example_study)
    assert s0 == pytest.approx(2.4, abs=1e-14)
    assert s1 == pytest.approx(4.15, abs=1e-14)
    assert dim(example_study) == pytest.approx(1.75, abs=1e-14)


def test_group_means_constant_and_empty():
    study = validate_study([0, 1, 0, 1], [3.0] * 4)
    assert group_means(study) == (3.0, 3.0)
    assert dim(study) == 0.0
    with pytest.raises(EmptyGroup):
        group_means(validate_study([1, 1], [1.0, 2.0]))


@given(two_group_rows)
def test_dim_antisymmetric(rows):
    study = _study(rows)
    flipped = validate_study(1 - study.a, study.y)
    assert dim(flipped) == pytest.approx(-dim(study), abs=1e-9)


def test_group_variance_stats():
    study = validate_study([1, 1, 0, 0], [1.0, 3.0, 0.0, 4.0])
    s02, s12, s2, maxmin = group_variance_stats(study)
    assert s12 == 1.0 and s02 == 4.0
    assert s2 == pytest.approx(np.log(4.0))
    assert maxmin == pytest.approx(4.0)
    equal = validate_study([1, 1, 0, 0], [1.0, 3.0, 5.0, 7.0])
    _, _, s2, maxmin = group_variance_stats(equal)
    assert s2 == 0.0 and maxmin == 1.0
    with pytest.raises(ZeroVariance):
        group_variance_stats(validate_study([1, 1, 0, 0], [1.0, 1.0, 5.0, 7.0]))


@given(two_group_rows, st.floats(0.01, 100))
def test_variance_ratios_scale_invariant(rows, factor):
    study = _study(rows)
    try:
        base = group_variance_stats(study)
    except ZeroVariance:
        return
    if min(base[0], base[1]) < 1e-6:
        return
    scaled = group_variance_stats(validate_study(study.a, study.y * factor))
    assert scaled[2] == pytest.approx(base[2], rel=1e-6, abs=1e-9)
    assert scaled[3] == pytest.approx(base[3], rel=1e-6)


def test_rank_sum_examples(example_study):
    assert rank_sum(example_study) == 6.0
    top = validate_study([0, 0, 0, 1, 1], [1.0, 2.0, 3.0, 4.0, 5.0])
    assert rank_sum(top) == 4 + 5
    tied = validate_study([0, 1, 1, 0], [2.0] * 4)
    assert rank_sum(tied) == 5.0


@given(two_group_rows)
def test_rank_sum_invariant_to_monotone_transform(rows):
    study = _study(rows)
    transformed = validate_study(study.a, np.arctan(study.y / 100.0) * 7 + 1)
    # arctan may merge extreme values into ties; only compare when ties are preserved.
    if len(np.unique(transformed.y)) == len(np.unique(study.y)):
        assert rank_sum(transformed) == rank_sum(study)


def test_std_moments_examples():
    np.testing.assert_allclose(std_moments(validate_study([1, 1, 0], [-1.0, 1.0, 9.0])),
                               [0, 1, 0, 1, 0], atol=1e-14)
    m = std_moments(validate_study([1, 1, 1, 0], [0.0, 0.0, 3.0, 5.0]))
    assert m[0] == pytest.approx(1.0) and m[1] == pytest.approx(np.sqrt(2))
    assert m[2] == pytest.approx((2 * (-1 / np.sqrt(2)) ** 3 + (2 / np.sqrt(2)) ** 3) / 3)


def test_std_moments_brute_force(rng):
    y = rng.gamma(2.0, size=15)
    a = np.r_[np.ones(9, dtype=int), np.zeros(6, dtype=int)]
    treated = y[:9]
    sd = np.sqrt(sum((v - sum(treated) / 9) ** 2 for v in treated) / 9)
    mean = sum(treated) / 9
    expected = [mean, sd] + [sum(((v - mean) / sd) ** j for v in treated) / 9 for j in (3, 4, 5)]
    np.testing.assert_allclose(std_moments(validate_study(a, y)), expected, rtol=1e-12)


def test_std_moments_symmetric_sample():
    m = std_moments(validate_study([1] * 6 + [0], [-3.0, -1.0, -0.5, 0.5, 1.0, 3.0, 0.0]))
    assert abs(m[2]) < 1e-14 and abs(m[4]) < 1e-14


def test_ipw_and_hajek_examples():
    study = validate_study([1, 0], [3.0, 1.0])
    assert ipw_stat(study, [0.5, 0.5]) == pytest.approx(2.0)
    assert hajek_stat(study, [0.5, 0.5]) == pytest.approx(2.0)
    zeros = validate_study([1, 0, 1], [0.0, 0.0, 0.0])
    assert ipw_stat(zeros, [0.3, 0.6, 0.5]) == 0.0
    with pytest.raises(DegenerateProbability):
        ipw_stat(study, [1.0, 0.5])


@given(two_group_rows, st.floats(0.05, 0.95))
def test_hajek_constant_pi_equals_dim(rows, pi):
    study = _study(rows)
    assert hajek_stat(study, np.full(study.n, pi)) == pytest.approx(dim(study), rel=1e-9, abs=1e-9)


@given(two_group_rows, outcomes)
def test_hajek_location_invariant(rows, shift):
    study = _study(rows)
    pi = np.linspace(0.2, 0.8, study.n)
    moved = validate_study(study.a, study.y + shift)
    assert hajek_stat(moved, pi) == pytest.approx(hajek_stat(study, pi), abs=1e-7)


def _bernoulli_support(pi):
    for bits in itertools.product([0, 1], repeat=len(pi)):
        a = np.array(bits)
        yield a, float(np.prod(np.where(a == 1, pi, 1 - pi)))


@pytest.mark.parametrize("seed", range(5))
def test_ipw_unbiased_by_enumeration(seed):
    gen = np.random.default_rng(seed)
    n = int(gen.integers(2, 7))
    y0, y1 = gen.normal(size=n), gen.normal(size=n) * 3
    pi = gen.uniform(0.1, 0.9, size=n)
    total = 0.0
    for a, prob in _bernoulli_support(pi):
        study = validate_study(a, np.where(a == 1, y1, y0))
        total += prob * ipw_stat(study, pi)
    assert total == pytest.approx(np.mean(y1 - y0), abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_dr_pseudo_outcomes_unbiased_by_enumeration(seed):
    gen = np.random.default_rng(100 + seed)
    n = int(gen.integers(2, 7))
    X = np.column_stack([np.ones(n), gen.normal(size=n)])
    y0, y1 = gen.normal(size=n), gen.normal(size=n) + 1
    pi = gen.uniform(0.1, 0.9, size=n)
    beta0, beta1 = gen.normal(size=2), gen.normal(size=2)
    total = np.zeros(n)
    for a, prob in _bernoulli_support(pi):
        study = validate_study(a, np.where(a == 1, y1, y0))
        total += prob * dr_pseudo_outcomes(study, X, beta0, beta1, pi)
    np.testing.assert_allclose(total, y1 - y0, atol=1e-10)


def test_dr_pseudo_outcomes_special_cases(rng):
    n = 8
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    a = np.array([0, 1] * 4)
    pi = rng.uniform(0.2, 0.8, size=n)
    study = validate_study(a, rng.normal(size=n))
    np.testing.assert_allclose(dr_pseudo_outcomes(study, X, np.zeros(2), np.zeros(2), pi),
                               ipw_pseudo_outcomes(study, pi), atol=1e-12)
    beta0, beta1 = np.array([1.0, 2.0]), np.array([-1.0, 0.5])
    perfect = validate_study(a, np.where(a == 1, X @ beta1, X @ beta0))
    np.testing.assert_allclose(dr_pseudo_outcomes(perfect, X, beta0, beta1, pi),
                               X @ (beta1 - beta0), atol=1e-12)


def test_ols_moderation(rng):
    n = 6
    study = validate_study([0, 1, 0, 1, 1, 0], rng.normal(size=n))
    pi = np.full(n, 0.5)
    tau = ipw_pseudo_outcomes(study, pi)
    assert ols_moderation_stat(study, np.ones(n), tau)[0] == pytest.approx(ipw_stat(study, pi))
    X = rng.normal(size=(n, 2))
    coef = np.array([0.3, -1.2])
    np.testing.assert_allclose(ols_moderation_stat(study, X, X @ coef), coef, atol=1e-12)
    oracle = np.linalg.lstsq(X, tau, rcond=None)[0]
    assert np.max(np.abs(ols_moderation_stat(study, X, tau) - oracle)) < 1e-10
    stat = OLSModeration(X, pi)
    np.testing.assert_allclose(stat.observed(study), ols_moderation_stat(study, X, tau), atol=1e-12)
    with pytest.raises(SingularDesign):
        ols_moderation_stat(study, np.column_stack([X[:, 0], X[:, 0]]), tau)


@given(two_group_rows, st.floats(-100, 100))
def test_d_delta0_identity(rows, theta):
    study = _study(rows)
    assert d_delta0(study, theta) == pytest.approx(dim(study) - theta, abs=1e-8)


def test_d_delta0_examples(example_study):
    assert d_delta0(example_study, 1.0) == pytest.approx(0.75)
    assert d_delta0(example_study, 0.0) == pytest.approx(1.75)
    assert d_delta0(example_study, dim(example_study)) == pytest.approx(0.0, abs=1e-14)


def test_compatibility_gate():
    check_compatible(GaussianShift(), GroupMean1())
    check_compatible(GaussianShift(), S12Pair())
    check_compatible(ConstantEffect(), DIM())
    with pytest.raises(IncompatibleStatistic):
        check_compatible(GaussianShift(), DIM())
    with pytest.raises(IncompatibleStatistic):
        check_compatible(GaussianShift(), Stack((GroupMean1(), RankSum())))


def test_vectorized_evaluation_matches_observed(rng, example_study):
    for stat in (DIM(), RankSum(), S12Pair(), MomentVector((1, 2, 3))):
        row = stat.evaluate(example_study.y[None, :], example_study.a[None, :].astype(bool))
        np.testing.assert_allclose(row[0], stat.observed(example_study))


def test_registry():
    assert isinstance(make_statistic("dim"), DIM)
    assert make_statistic("moments", orders=(1, 2)).k == 2
    with pytest.raises(KeyError):
        make_statistic("nope")


def test_slope_difference(rng):
    x = rng.normal(size=40)
    a = np.r_[np.ones(20, dtype=int), np.zeros(20, dtype=int)]
    y = np.where(a == 1, 3.0 * x, 1.0 * x)
    assert SlopeDifference(x).observed(validate_study(a, y))[0] == pytest.approx(2.0)
