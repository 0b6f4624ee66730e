import numpy as np
import pytest

from bri import (AsymptoticGaussianDIM, ConstantEffect, HalfNormal, Normal, Prior, Uniform,
                 dim_estimator, grid_posterior, lib_posterior, prior_only, validate_study)
from bri.errors import EmptyGroup
from bri.harness import dgp_sample
from bri.likelihood import neyman_variance
from bri.statistics import dim


def test_prior_only_normal():
    est = prior_only(Prior((Normal(0, 10),)))
    assert est.point == pytest.approx(0.0, abs=1e-12)
    assert est.length == pytest.approx(39.210, abs=5e-4)
    exact = prior_only(Prior((Normal(0, 10),)), grid=None)
    assert exact.length == pytest.approx(2 * 1.959963984540054 * 10, abs=1e-9)


def test_prior_only_uniform_and_half_normal():
    est = prior_only(Prior((Uniform(-1, 1),)), grid=None)
    assert est.ci == pytest.approx((-0.95, 0.95), abs=1e-12)
    assert prior_only(Prior((HalfNormal(3),)), grid=None).point > 0
    assert prior_only(Prior((HalfNormal(3),))).point > 0


def test_dim_estimator(rng):
    study, _ = dgp_sample(6, 7, rng)
    est = dim_estimator(study)
    half = 1.959963984540054 * np.sqrt(neyman_variance(study))
    assert est.point == pytest.approx(dim(study))
    assert est.ci == pytest.approx((dim(study) - half, dim(study) + half))
    y, a = study.y, study.a
    manual = np.var(y[a == 1]) / a.sum() + np.var(y[a == 0]) / (a == 0).sum()
    assert neyman_variance(study) == pytest.approx(manual)
    # (0, 1, 1, 0), (1.2, 4.9, 3.4, 3.6): group variances 0.5625 and 1.44 over 2
    example = validate_study([0, 1, 1, 0], [1.2, 4.9, 3.4, 3.6])
    assert neyman_variance(example) == pytest.approx(0.5625 / 2 + 1.44 / 2, abs=1e-12)


def test_dim_estimator_degenerate_interval():
    study = validate_study([0, 0, 1, 1], [2.0, 2.0, 5.0, 5.0])
    est = dim_estimator(study)
    assert est.ci == (3.0, 3.0)
    with pytest.raises(EmptyGroup):
        dim_estimator(validate_study([0, 1, 1], [1.0, 2.0, 3.0]))


def test_dim_interval_shrinks_with_root_n():
    ratios = []
    for rep in range(200):
        gen = np.random.default_rng(rep)
        small, _ = dgp_sample(25, 25, gen)
        large, _ = dgp_sample(100, 100, gen)
        ratios.append(dim_estimator(large).length / dim_estimator(small).length)
    assert np.mean(ratios) == pytest.approx(0.5, rel=0.05)


def test_lib_conjugate_matches_grid(rng):
    study, _ = dgp_sample(5, 5, rng)
    prior = Prior((Normal(0, 10),))
    closed = lib_posterior(prior, study)
    grid = lib_posterior(prior, study, grid=(-50, 50, 10001))
    assert grid.point == pytest.approx(closed.point, abs=1e-6)
    assert grid.posterior.sd[0] == pytest.approx(
        (1 / 100 + 1 / neyman_variance(study)) ** -0.5, abs=1e-6)


def test_lib_flat_prior_limit(rng):
    study, _ = dgp_sample(8, 8, rng)
    est = lib_posterior(Prior((Normal(0, 1e8),)), study)
    assert est.point == pytest.approx(dim(study), abs=1e-6)


def test_lib_symmetric_bri_a_skewed():
    study = validate_study([0] * 5 + [1] * 5, [0.0, 0.1, 0.2, 0.1, 0.0, 10.0, 30.0, 5.0, 40.0, 15.0])
    prior = Prior((Normal(0, 10),))
    grid = (-150, 150, 30001)
    lib = lib_posterior(prior, study, grid=grid)
    assert abs(lib.posterior.skewness()) < 1e-8
    # v_n(theta) is smallest at the observed difference in means, so the
    # prior pull away from it meets a likelihood whose spread changes
    bri_a = grid_posterior(prior, AsymptoticGaussianDIM(), study, ConstantEffect(), grid=grid)
    assert abs(bri_a.skewness()) > 1e-3
