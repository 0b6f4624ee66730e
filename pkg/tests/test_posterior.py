import numpy as np
import pytest
from scipy import stats

from bri import (AsymptoticGaussianDIM, randomization_moments, CompleteRandomization, ConstantEffect, GaussianShift,
                 NeymanGaussianDIM, Normal, Prior, RngStream, Uniform, bvm_summary,
                 bvm_tv_distance, ess, grid_posterior, hodges_lehmann, mh_sample, split_rhat)
from bri.errors import (AllZeroDensity, NoSignChange, NonFiniteInit, StuckChain,
                        UnsupportedCombination)
from bri.harness import dgp_sample
from bri.likelihood import LikelihoodEngine, model_based_variance, neyman_variance
from bri.posterior import AsymptoticSummary, PosteriorResult, ipw_scaled_variance
from bri.statistics import DIM, IPW, Hajek, RankSum, dim, ipw_stat
from bri.randomization import enumerate_statistic


class GaussianTarget(LikelihoodEngine):
    """Likelihood proportional to independent normal densities in theta."""

    def __init__(self, center, scale):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.scale = np.atleast_1d(np.asarray(scale, dtype=float))

    def log_likelihood(self, model, theta, study, s_obs=None, rng=None):
        return float(stats.norm.logpdf(np.atleast_1d(theta), self.center, self.scale).sum())


class TwoModes(LikelihoodEngine):
    def log_likelihood(self, model, theta, study, s_obs=None, rng=None):
        t = float(np.atleast_1d(theta)[0])
        return float(np.logaddexp(stats.norm.logpdf(t, -20, 1), stats.norm.logpdf(t, 20, 1)))


class Flat(LikelihoodEngine):
    def log_likelihood(self, model, theta, study, s_obs=None, rng=None):
        return 0.0


class Nowhere(LikelihoodEngine):
    def log_likelihood(self, model, theta, study, s_obs=None, rng=None):
        return -np.inf


class OnlyAt(LikelihoodEngine):
    def __init__(self, point):
        self.point = point

    def log_likelihood(self, model, theta, study, s_obs=None, rng=None):
        return 0.0 if float(np.atleast_1d(theta)[0]) == self.point else -np.inf


@pytest.fixture
def sim_study():
    study, _ = dgp_sample(5, 5, np.random.default_rng(21))
    return study


def test_grid_density_normalized(sim_study):
    post = grid_posterior(Prior((Normal(0, 10),)), AsymptoticGaussianDIM(), sim_study, ConstantEffect())
    x = post.axes[0]
    assert abs(post.density.sum() * (x[1] - x[0]) - 1) < 1e-10
    lo, hi = post.ci(0.95)[0]
    assert lo <= post.median() <= hi


def test_flat_likelihood_returns_prior(sim_study):
    post = grid_posterior(Prior((Normal(3, 10),)), Flat(), sim_study, ConstantEffect(), grid=(-50, 50, 2001))
    x = post.axes[0]
    prior = stats.norm.pdf(x, 3, 10)
    prior /= prior.sum() * (x[1] - x[0])
    np.testing.assert_allclose(post.density, prior, rtol=1e-10)


def test_conjugate_normal(sim_study):
    prior_sd = 10.0
    post = grid_posterior(Prior((Normal(0, prior_sd),)), NeymanGaussianDIM(), sim_study, ConstantEffect())
    v = neyman_variance(sim_study)
    precision = 1 / v + 1 / prior_sd ** 2
    mean = dim(sim_study) / v / precision
    assert abs(post.mean[0] - mean) < 1e-6
    assert abs(post.sd[0] - precision ** -0.5) < 1e-6


def test_prior_interval_length_on_grid(sim_study):
    post = grid_posterior(Prior((Normal(0, 10),)), Flat(), sim_study, ConstantEffect())
    lo, hi = post.ci(0.95)[0]
    assert hi - lo == pytest.approx(39.21, abs=1e-9)


def test_all_zero_density(sim_study):
    with pytest.raises(AllZeroDensity):
        grid_posterior(Prior((Normal(0, 10),)), Nowhere(), sim_study, ConstantEffect())


def test_two_dimensional_grid(sim_study):
    engine = GaussianTarget([1.0, 2.0], [0.5, 0.25])
    prior = Prior((Uniform(-10, 10), Uniform(0.01, 10)))
    post = grid_posterior(prior, engine, sim_study, GaussianShift(), grid=[(-5, 5, 401), (0.01, 5, 400)])
    np.testing.assert_allclose(post.mean, [1.0, 2.0], atol=1e-3)
    np.testing.assert_allclose(post.sd, [0.5, 0.25], rtol=1e-2)
    assert abs(post.cov[0, 1]) < 1e-8


def test_split_rhat_calibration(rng):
    mixed = rng.normal(size=(2000, 2))
    assert split_rhat(mixed) < 1.01
    apart = np.column_stack([rng.normal(-20, 1, 2000), rng.normal(20, 1, 2000)])
    assert split_rhat(apart) > 1.1
    assert split_rhat(mixed) >= 1 - 1e-6


def test_ess_of_iid_and_ar1(rng):
    iid = rng.normal(size=(4000, 4))
    assert 0.8 * iid.size < ess(iid) < 1.2 * iid.size
    rho = 0.9
    x = np.empty((20000, 2))
    x[0] = rng.normal(size=2)
    for t in range(1, x.shape[0]):
        x[t] = rho * x[t - 1] + np.sqrt(1 - rho ** 2) * rng.normal(size=2)
    expected = x.size * (1 - rho) / (1 + rho)
    assert 0.7 * expected < ess(x) < 1.3 * expected


def test_mh_standard_gaussian(sim_study):
    post = mh_sample(Prior((Uniform(-50, 50),)), GaussianTarget(0.0, 1.0), sim_study, ConstantEffect(),
                     init=[0.5], warmup=1000, iters=2000, chains=4, rng=RngStream(1))
    assert post.ess[0] >= 1000
    assert abs(post.mean[0]) < 3 / np.sqrt(post.ess[0])
    assert abs(post.sd[0] - 1) < 0.05
    assert post.rhat[0] < 1.01
    assert np.all((post.acceptance > 0.3) & (post.acceptance < 0.6))


def test_mh_reproducible(sim_study):
    kwargs = dict(init=[0.0], warmup=200, iters=200, chains=2)
    first = mh_sample(Prior((Uniform(-50, 50),)), GaussianTarget(1.0, 2.0), sim_study, ConstantEffect(),
                      rng=RngStream(9), **kwargs)
    second = mh_sample(Prior((Uniform(-50, 50),)), GaussianTarget(1.0, 2.0), sim_study, ConstantEffect(),
                       rng=RngStream(9), **kwargs)
    assert np.array_equal(first.draws, second.draws)


def test_mh_detects_separated_modes(sim_study):
    post = mh_sample(Prior((Uniform(-50, 50),)), TwoModes(), sim_study, ConstantEffect(),
                     init=[[-20.0], [20.0]], warmup=500, iters=1000, chains=2, rng=RngStream(2))
    assert post.rhat[0] > 1.1


def test_mh_agrees_with_grid_on_conjugate_case(sim_study):
    prior = Prior((Normal(0, 10),))
    grid = grid_posterior(prior, NeymanGaussianDIM(), sim_study, ConstantEffect())
    chains = mh_sample(prior, NeymanGaussianDIM(), sim_study, ConstantEffect(), init=[0.0],
                       warmup=1000, iters=2000, chains=4, rng=RngStream(4))
    se = chains.sd[0] / np.sqrt(chains.ess[0])
    assert abs(grid.mean[0] - chains.mean[0]) < 3 * se


def test_mh_two_parameters(sim_study):
    post = mh_sample(Prior((Uniform(-10, 10), Uniform(0.01, 10))), GaussianTarget([1.0, 2.0], [0.5, 0.25]),
                     sim_study, GaussianShift(), init=[0.0, 1.0], warmup=1500, iters=2000, chains=4,
                     rng=RngStream(5))
    np.testing.assert_allclose(post.mean, [1.0, 2.0], atol=0.05)
    assert np.all(post.rhat < 1.01)


def test_mh_errors(sim_study):
    with pytest.raises(NonFiniteInit):
        mh_sample(Prior((Uniform(-1, 1),)), Flat(), sim_study, ConstantEffect(), init=[5.0],
                  warmup=10, iters=10, chains=1, rng=RngStream(0))
    with pytest.raises(StuckChain):
        mh_sample(Prior((Uniform(-1, 1),)), OnlyAt(0.25), sim_study, ConstantEffect(), init=[0.25],
                  warmup=50, iters=100, chains=1, rng=RngStream(0))


def test_hodges_lehmann_dim_and_ipw(sim_study):
    mech = CompleteRandomization(10, 5)
    assert hodges_lehmann(ConstantEffect(), DIM(), sim_study, mech) == pytest.approx(dim(sim_study), abs=1e-9)
    pi = np.full(10, 0.5)
    assert hodges_lehmann(ConstantEffect(), IPW(pi), sim_study, mech) == pytest.approx(
        ipw_stat(sim_study, pi), abs=1e-9)


def test_hodges_lehmann_monte_carlo(rng):
    study, _ = dgp_sample(30, 30, rng)
    est = hodges_lehmann(ConstantEffect(), DIM(), study, CompleteRandomization(60, 30), mode="mc",
                         m=2000, rng=RngStream(3))
    se = np.sqrt(model_based_variance(dim(study), study) / study.n / 2000)
    assert abs(est - dim(study)) < 3 * se
    again = hodges_lehmann(ConstantEffect(), DIM(), study, CompleteRandomization(60, 30), mode="mc",
                           m=2000, rng=RngStream(3))
    assert again == est


def test_hodges_lehmann_rank_sum_matches_grid_search():
    study, _ = dgp_sample(4, 4, np.random.default_rng(31))
    mech = CompleteRandomization(8, 4)
    est = hodges_lehmann(ConstantEffect(), RankSum(), study, mech)
    grid = np.linspace(-50, 50, 2001)
    w_obs = RankSum().observed(study)[0]
    r = []
    for t in grid:
        vals, probs = enumerate_statistic(ConstantEffect(), [t], study, RankSum(), mech)
        r.append(probs @ vals[:, 0])
    gap = np.abs(np.array(r) - w_obs)
    best = grid[gap <= gap.min() + 1e-12]
    step = grid[1] - grid[0]
    assert best.min() - step <= est <= best.max() + step


def test_hodges_lehmann_bracket_errors(sim_study):
    mech = CompleteRandomization(10, 5)
    with pytest.raises(NoSignChange):
        hodges_lehmann(ConstantEffect(), DIM(), sim_study, mech, bracket=(dim(sim_study) + 1, dim(sim_study) + 5))


def test_bvm_summary_dim(sim_study):
    asym = bvm_summary(sim_study, ConstantEffect(), DIM(), CompleteRandomization(10, 5))
    assert asym.r_prime[0, 0] == 1.0
    assert asym.mu_n[0] == pytest.approx(dim(sim_study))
    assert asym.Sigma[0, 0] == pytest.approx(float(model_based_variance(dim(sim_study), sim_study)))
    with pytest.raises(UnsupportedCombination):
        bvm_summary(sim_study, ConstantEffect(), RankSum())
    with pytest.raises(UnsupportedCombination):
        bvm_summary(sim_study, GaussianShift(), DIM())


def test_bvm_sigma_matches_group_variance_form():
    study, _ = dgp_sample(1000, 1000, np.random.default_rng(2))
    asym = bvm_summary(study, ConstantEffect(), DIM())
    y, a = study.y, study.a
    pi = 0.5
    group_form = np.var(y[a == 1], ddof=1) / (1 - pi) + np.var(y[a == 0], ddof=1) / pi
    assert asym.Sigma[0, 0] == pytest.approx(group_form, rel=2 / study.n)
    length = np.diff(asym.ci(0.95)[0])[0]
    assert length == pytest.approx(2 * 1.96 * np.sqrt(4 * 125 / 2000), rel=0.05)


@pytest.mark.parametrize("stat_cls", [IPW, Hajek])
def test_bvm_summary_weighted_statistics(stat_cls, sim_study):
    pi = np.full(10, 0.5)
    asym = bvm_summary(sim_study, ConstantEffect(), stat_cls(pi))
    assert asym.mu_n[0] == pytest.approx(stat_cls(pi).observed(sim_study)[0])
    assert asym.Sigma[0, 0] > 0


def test_bvm_scaled_variances_match_enumeration():
    study, _ = dgp_sample(5, 5, np.random.default_rng(40))
    mech = CompleteRandomization(10, 5)
    pi = np.full(10, 0.5)
    theta = 1.5
    mom = randomization_moments(ConstantEffect(), [theta], study, IPW(pi), mech)
    # complete randomization has lower variance than Bernoulli sampling
    assert mom.V_n[0, 0] <= ipw_scaled_variance(theta, study, pi)[0] + 1e-9


def test_tv_distance_extremes():
    x = np.linspace(-50, 50, 10001)
    gauss = stats.norm.pdf(x, 1.0, 2.0)
    post = PosteriorResult(names=("theta",), mean=np.array([1.0]), cov=np.array([[4.0]]),
                           axes=(x,), density=gauss / (gauss.sum() * (x[1] - x[0])))
    asym = AsymptoticSummary(np.array([1.0]), np.eye(1), np.array([[4.0]]), np.array([1.0]),
                             np.array([[4.0]]), n=1)
    assert bvm_tv_distance(post, asym) < 1e-10
    far = AsymptoticSummary(np.array([1.0]), np.eye(1), np.array([[4.0]]), np.array([500.0]),
                            np.array([[4.0]]), n=1)
    assert bvm_tv_distance(post, far) == pytest.approx(2.0)
