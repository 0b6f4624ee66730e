"""Baseline estimators compared against the randomization posteriors:
prior-only intervals, difference in means with the Neyman variance, and
the posterior that uses the Gaussian sampling distribution of the
difference in means as its likelihood."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .core import ObservedStudy
from .errors import EmptyGroup, ZeroVariance
from .likelihood import NeymanGaussianDIM, neyman_variance
from .models import ConstantEffect, Normal, Prior
from .posterior import PosteriorResult, grid_posterior
from .statistics import dim

DEFAULT_GRID = (-50.0, 50.0, 10001)


@dataclass(frozen=True, eq=False)
class EstimateWithCI:
    """Point estimate with an interval at nominal coverage ``level``."""

    point: float
    ci: tuple
    level: float
    method: str
    posterior: Optional[PosteriorResult] = None

    @property
    def length(self) -> float:
        return float(self.ci[1] - self.ci[0])

    def covers(self, value: float) -> bool:
        return bool(self.ci[0] <= value <= self.ci[1])


def _z(level):
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    return float(stats.norm.ppf(0.5 + level / 2))


class _Flat:
    """Constant likelihood, so that a grid posterior equals the prior."""

    def log_likelihood_grid(self, model, thetas, study, s_obs=None, rng=None):
        return np.zeros(len(thetas))


def prior_only(prior: Prior, level: float = 0.95, grid=DEFAULT_GRID) -> EstimateWithCI:
    """Prior mean and equal-tailed prior interval of a one-dimensional prior.

    With ``grid`` (the default) the prior is discretized on the same grid as
    the grid posteriors, so its interval is directly comparable with theirs.
    ``grid=None`` uses the exact quantiles.
    """
    if len(prior) != 1:
        raise ValueError("prior_only handles one-dimensional priors")
    if grid is None:
        dist = prior.components[0].dist
        tail = (1 - level) / 2
        return EstimateWithCI(float(dist.mean()), (float(dist.ppf(tail)), float(dist.ppf(1 - tail))),
                              level, "prior")
    # any study will do; the likelihood ignores it
    post = grid_posterior(prior, _Flat(), None, ConstantEffect(), grid)
    lo, hi = post.ci(level)[0]
    return EstimateWithCI(float(post.mean[0]), (float(lo), float(hi)), level, "prior", post)


def dim_estimator(study: ObservedStudy, level: float = 0.95) -> EstimateWithCI:
    """Difference in means with a normal interval from the conservative
    Neyman variance ``S1^2 / n1 + S0^2 / n0`` (divisor group size)."""
    if study.n0 < 2 or study.n1 < 2:
        raise EmptyGroup("each group needs at least two units")
    point = dim(study)
    half = _z(level) * np.sqrt(neyman_variance(study))
    return EstimateWithCI(point, (point - half, point + half), level, "dim")


def lib_posterior(prior: Prior, study: ObservedStudy, level: float = 0.95,
                  grid=None) -> EstimateWithCI:
    """Posterior under the likelihood ``N(s_dim; theta, V)`` with the Neyman
    variance ``V`` fixed at the observed data.

    A normal prior without ``grid`` gives the conjugate closed form;
    otherwise the posterior is computed on ``grid`` (default ``[-50, 50]``).
    """
    s = dim(study)
    v = neyman_variance(study)
    if not v > 0:
        raise ZeroVariance("Neyman variance is zero")
    comp = prior.components[0]
    if grid is None and len(prior) == 1 and isinstance(comp, Normal):
        prec = 1 / comp.sd ** 2 + 1 / v
        mean = (comp.mean / comp.sd ** 2 + s / v) / prec
        half = _z(level) / np.sqrt(prec)
        return EstimateWithCI(float(mean), (mean - half, mean + half), level, "lib")
    post = grid_posterior(prior, NeymanGaussianDIM(), study, ConstantEffect(), grid or DEFAULT_GRID)
    lo, hi = post.ci(level)[0]
    return EstimateWithCI(float(post.mean[0]), (float(lo), float(hi)), level, "lib", post)
