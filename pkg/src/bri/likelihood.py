"""Likelihood engines ``log p(s | theta, y_a)`` and randomization moments.

Each engine holds a statistic and an assignment mechanism and exposes

* ``log_likelihood(model, theta, study, s_obs=None, rng=None)`` for one
  parameter value, and
* ``log_likelihood_grid(model, thetas, study, s_obs=None, rng=None)`` for a
  batch of parameter rows.

``s_obs`` defaults to the statistic of the observed study; passing another
value supports the oracle variants used in the simulation harness.

Several engines have closed-form grid paths for the constant-effect model,
where every randomization draw moves the statistic along a known line (or
step function) in ``theta``. The generic per-value path is kept and tested
against them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .core import ObservedStudy, RngStream, as_generator, as_values, coarsening_schedule
from .errors import (IncompatibleStatistic, SingularCovariance, SupportTooLarge,
                     ValidationError, ZeroVariance)
from .models import ConstantEffect, imputation_table, outcomes_under
from .randomization import (EXACT_SUPPORT_LIMIT, enumerate_assignments, enumerate_statistic,
                            sample_assignments, simulate_statistic, support_size,
                            tie_tolerance)
from .statistics import DIM, RankSum, check_compatible

DEFAULT_MC_DRAWS = 10_000


def _obs(stat, study, s_obs, theta=None):
    if s_obs is None:
        return stat.observed(study, theta if stat.uses_theta else None)
    return np.atleast_1d(np.asarray(s_obs, dtype=float))


def _theta_grid(model, thetas):
    t = np.asarray(thetas, dtype=float)
    if t.ndim == 1:
        t = t[:, None] if len(model.param_names) == 1 else t[None, :]
    return t


def _stream_for(rng, theta=None):
    """Generator from an RngStream or Generator, optionally keyed by theta."""
    if isinstance(rng, RngStream):
        return (rng.keyed(theta) if theta is not None else rng).generator()
    if rng is None:
        raise ValueError("this engine needs an rng")
    return as_generator(rng)


# -- randomization moments -------------------------------------------------------


@dataclass(frozen=True)
class RandomizationMoments:
    """Mean ``r_n`` and scaled covariance ``V_n = n Var(s)`` of a statistic.

    ``source`` is ``"exact_enumeration"`` or ``"monte_carlo"``; for Monte
    Carlo, ``m`` is the draw count and ``r_se`` the standard error of each
    mean coordinate.
    """

    r_n: np.ndarray
    V_n: np.ndarray
    source: str
    m: Optional[int] = None
    r_se: Optional[np.ndarray] = None


def _linear_atom_moments(model, theta_rows, study, stat, A):
    """Conditional mean and variance of a linear statistic for each
    assignment row and each parameter row, with Gaussian imputation noise
    integrated out analytically.

    Returns arrays of shape ``(len(A), len(theta_rows))``.
    """
    imp = imputation_table(model, theta_rows, study)
    W = stat.linear_weights(A)
    Af = A.astype(bool)
    W1 = np.where(Af, W, 0.0)
    W0 = np.where(Af, 0.0, W)
    y0 = np.nan_to_num(imp.y0, nan=0.0)
    mean = W1 @ imp.y1.T + W0 @ y0.T
    noisy = Af & (study.a == 0)[None, :]
    var = (np.where(noisy, W1, 0.0) ** 2).sum(axis=1)[:, None] * (imp.noise_sd ** 2)[None, :]
    if stat.uses_theta:
        mean = mean + np.array([stat.linear_offset(None, t) for t in theta_rows])[None, :]
    return mean, var


def randomization_moments(model, theta, study: ObservedStudy, stat, mech,
                          mode: str = "exact", m: int = DEFAULT_MC_DRAWS, rng=None,
                          cap: int = EXACT_SUPPORT_LIMIT, inner: int = 200):
    """Mean and ``n``-scaled covariance of ``stat`` under the randomization
    distribution at ``theta``.

    ``mode="exact"`` enumerates assignments. Stochastic models are handled
    analytically when the statistic is linear in outcomes, and otherwise
    with ``inner`` imputation draws per assignment. ``mode="mc"`` averages
    ``m`` joint draws.
    """
    check_compatible(model, stat)
    th = as_values(theta)
    n = study.n
    if mode == "mc":
        gen = _stream_for(rng)
        draws = simulate_statistic(model, th, study, stat, mech, m, gen)
        draws = draws[np.all(np.isfinite(draws), axis=1)]
        mean = draws.mean(axis=0)
        cov = np.atleast_2d(np.cov(draws, rowvar=False, ddof=1))
        se = np.sqrt(np.diag(cov) / draws.shape[0])
        return RandomizationMoments(mean, n * cov, "monte_carlo", int(draws.shape[0]), se)
    if mode != "exact":
        raise ValueError("mode must be 'exact' or 'mc'")
    if not model.stochastic:
        vals, probs = enumerate_statistic(model, th, study, stat, mech, cap)
        ok = np.all(np.isfinite(vals), axis=1)
        vals, probs = vals[ok], probs[ok] / probs[ok].sum()
        mean = probs @ vals
        dev = vals - mean
        cov = (dev * probs[:, None]).T @ dev
        return RandomizationMoments(mean, n * cov, "exact_enumeration")
    if mech.needs_y1:
        raise ValidationError("exact moments with an outcome-dependent mechanism need a deterministic model")
    enum = enumerate_assignments(mech, cap)
    A, probs = enum.assignments, enum.probs
    if stat.k == 1 and stat.linear_weights(A[:1]) is not None:
        cm, cv = _linear_atom_moments(model, th[None, :], study, stat, A)
        cm, cv = cm[:, 0], cv[:, 0]
        ok = np.isfinite(cm)
        p = probs[ok] / probs[ok].sum()
        mean = p @ cm[ok]
        var = p @ (cv[ok] + cm[ok] ** 2) - mean ** 2
        return RandomizationMoments(np.array([mean]), np.array([[n * var]]), "exact_enumeration")
    # nested Monte Carlo over imputation noise, exact over assignments
    gen = _stream_for(rng)
    imp = imputation_table(model, th, study)
    rows = np.repeat(A, inner, axis=0)
    Y = outcomes_under(imp, study, rows, gen)
    vals = stat.evaluate(Y, rows, np.broadcast_to(th, (rows.shape[0], th.size))
                         if stat.uses_theta else None)
    w = np.repeat(probs, inner) / inner
    ok = np.all(np.isfinite(vals), axis=1)
    w = w[ok] / w[ok].sum()
    mean = w @ vals[ok]
    dev = vals[ok] - mean
    cov = (dev * w[:, None]).T @ dev
    return RandomizationMoments(mean, n * cov, "exact_enumeration")


# -- helpers for the constant-effect closed forms -------------------------------


def _dim_lines(study, A):
    """For the constant model, the difference in means under assignment
    rows ``A`` is ``D_y + theta * c``; returns ``(D_y, c)``."""
    Af = A.astype(float)
    n1 = Af.sum(axis=1)
    n0 = A.shape[1] - n1
    y, a = study.y, study.a.astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        d_y = Af @ y / n1 - (1 - Af) @ y / n0
        d_a = Af @ a / n1 - (1 - Af) @ a / n0
    return d_y, 1.0 - d_a


def _interval_mass(grid, lo, hi, w, always, hi_side="right"):
    """Sum of weights ``w`` of the intervals ``[lo, hi]`` covering each grid
    point, plus the weights flagged ``always``.

    ``hi_side="left"`` makes the upper end open.
    """
    G = grid.size
    diff = np.zeros(G + 1)
    finite = ~always & np.isfinite(lo) & np.isfinite(hi)
    i_lo = np.searchsorted(grid, lo[finite], side="left")
    i_hi = np.searchsorted(grid, hi[finite], side=hi_side)
    np.add.at(diff, i_lo, w[finite])
    np.add.at(diff, i_hi, -w[finite])
    mass = np.cumsum(diff[:G]) + w[always].sum()
    # any covered atom contributes at least the smallest weight; the rest is
    # cancellation error from the running sum
    floor = 0.5 * w[w > 0].min() if np.any(w > 0) else 0.0
    return np.where(mass < floor, 0.0, mass)


def _constant_dim_fast(model, stat, mech):
    return (isinstance(model, ConstantEffect) and type(stat) is DIM
            and not mech.needs_y1)


def _draws_or_support(engine, study, rng):
    """Assignment rows and weights: the full support when small enough,
    otherwise Monte Carlo draws with equal weights."""
    if engine.draws is None and support_size(engine.mech) <= engine.cap:
        enum = enumerate_assignments(engine.mech, engine.cap)
        return enum.assignments, enum.probs, True
    m = engine.draws or DEFAULT_MC_DRAWS
    A = sample_assignments(engine.mech, _stream_for(rng), m)
    return A, np.full(m, 1.0 / m), False


def _statistic_support(engine, model, theta, study, rng):
    """Statistic values and weights at one theta (enumerated or simulated)."""
    check_compatible(model, engine.stat)
    th = as_values(theta)
    if not model.stochastic and engine.draws is None \
            and support_size(engine.mech) <= engine.cap:
        vals, probs = enumerate_statistic(model, th, study, engine.stat, engine.mech, engine.cap)
        return vals, probs, True
    m = engine.draws or DEFAULT_MC_DRAWS
    vals = simulate_statistic(model, th, study, engine.stat, engine.mech, m, _stream_for(rng))
    return vals, np.full(m, 1.0 / m), False


# -- engines -----------------------------------------------------------------------


class LikelihoodEngine:
    """Base class for likelihood engines."""

    kind = "engine"

    def log_likelihood(self, model, theta, study, s_obs=None, rng=None) -> float:  # pragma: no cover
        raise NotImplementedError

    def log_likelihood_grid(self, model, thetas, study, s_obs=None, rng=None) -> np.ndarray:
        t = _theta_grid(model, thetas)
        return np.array([self.log_likelihood(model, row, study, s_obs, rng) for row in t])


@dataclass(frozen=True, eq=False)
class ExactEnum(LikelihoodEngine):
    """Exact likelihood by enumerating the assignment mechanism.

    For a deterministic model this is the total probability of assignments
    whose statistic equals ``s_obs`` (to a ``1e-12`` relative tolerance).
    For a stochastic model with a scalar statistic that is linear in the
    outcomes, the imputation noise is integrated analytically and the
    likelihood is a Gaussian mixture over assignments. Assignments under
    which the statistic has no noise at all (for example the observed
    assignment, when the statistic reads only observed outcomes) are point
    masses that do not depend on ``theta``; they are left out of the
    mixture density.
    """

    stat: object
    mech: object
    cap: int = EXACT_SUPPORT_LIMIT
    kind = "exact"

    def log_likelihood(self, model, theta, study, s_obs=None, rng=None):
        return float(self.log_likelihood_grid(model, np.atleast_1d(as_values(theta))[None, :],
                                              study, s_obs, rng)[0])

    def log_likelihood_grid(self, model, thetas, study, s_obs=None, rng=None):
        check_compatible(model, self.stat)
        t = _theta_grid(model, thetas)
        if model.stochastic:
            return self._mixture(model, t, study, s_obs)
        if support_size(self.mech) > self.cap:
            raise SupportTooLarge(f"support exceeds cap {self.cap}")
        if (isinstance(model, ConstantEffect) and type(self.stat) is RankSum
                and not self.mech.needs_y1):
            return self._rank_sum_grid(t[:, 0], study, s_obs)
        out = np.empty(t.shape[0])
        for g, row in enumerate(t):
            obs = _obs(self.stat, study, s_obs, row)
            vals, probs = enumerate_statistic(model, row, study, self.stat, self.mech, self.cap)
            tol = np.array([tie_tolerance(v) for v in obs])
            hit = np.all(np.abs(vals - obs) <= tol, axis=1)
            mass = probs[hit].sum()
            out[g] = np.log(mass) if mass > 0 else -np.inf
        return out

    def _mixture(self, model, t, study, s_obs):
        if self.stat.k != 1 or self.mech.needs_y1:
            raise IncompatibleStatistic(
                "exact enumeration with a stochastic model needs a scalar linear statistic")
        enum = enumerate_assignments(self.mech, self.cap)
        if self.stat.linear_weights(enum.assignments[:1]) is None:
            raise IncompatibleStatistic("statistic is not linear in the outcomes")
        obs = float(_obs(self.stat, study, s_obs)[0])
        cm, cv = _linear_atom_moments(model, t, study, self.stat, enum.assignments)
        logp = np.log(enum.probs)[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            comp = -0.5 * (obs - cm) ** 2 / cv - 0.5 * np.log(2 * np.pi * cv)
        comp = np.where((cv > 0) & np.isfinite(cm), comp, -np.inf)
        return logsumexp(comp + logp, axis=0)

    def _rank_sum_grid(self, grid, study, s_obs):
        """Constant model + rank sum: each treated/control pair flips order
        at a single threshold in ``theta``."""
        enum = enumerate_assignments(self.mech, self.cap)
        obs = float(_obs(self.stat, study, s_obs)[0])
        y, a = study.y, study.a.astype(float)
        order = np.argsort(grid)
        g = grid[order]
        n_atoms = len(enum)
        counts = np.empty((n_atoms, g.size))
        lo_clip, hi_clip = g[0] - 1.0, g[-1] + 1.0
        thresholds, bases = [], np.empty(n_atoms)
        for r, row in enumerate(enum.assignments):
            ti, tj = np.flatnonzero(row), np.flatnonzero(~row)
            d = y[ti][:, None] - y[tj][None, :]
            c = 1.0 - a[ti][:, None] + a[tj][None, :]
            fixed = c == 0
            n1 = ti.size
            bases[r] = n1 * (n1 + 1) / 2 + (d[fixed] > 0).sum() + 0.5 * (d[fixed] == 0).sum()
            thresholds.append(np.sort(np.clip(-d[~fixed] / c[~fixed], lo_clip, hi_clip)))
        sizes = np.array([th.size for th in thresholds])
        if np.all(sizes == sizes[0]):
            T = np.vstack(thresholds)
            span = hi_clip - lo_clip + 1.0
            offs = np.arange(n_atoms)[:, None] * span
            flat = (T + offs).ravel()
            q = g[None, :] + offs
            left = np.searchsorted(flat, q, side="left") - np.arange(n_atoms)[:, None] * sizes[0]
            right = np.searchsorted(flat, q, side="right") - np.arange(n_atoms)[:, None] * sizes[0]
            counts = bases[:, None] + 0.5 * (left + right)
        else:
            for r, th in enumerate(thresholds):
                counts[r] = bases[r] + 0.5 * (np.searchsorted(th, g, "left")
                                              + np.searchsorted(th, g, "right"))
        hit = np.abs(counts - obs) <= tie_tolerance(obs)
        mass = enum.probs @ hit
        out = np.empty_like(mass)
        out[order] = mass
        with np.errstate(divide="ignore"):
            return np.log(out)


@dataclass(frozen=True, eq=False)
class CoarsenedMC(LikelihoodEngine):
    """Probability that the statistic lands within ``eps`` (sup norm) of its
    observed value, divided by ``(2 eps sqrt(n))^k``.

    ``eps=None`` uses the error-optimal schedule ``n^(-alpha)``. With
    ``draws=None`` the mechanism is enumerated when its support has at most
    ``cap`` points; otherwise ``draws`` (default ``1e4``) Monte Carlo draws
    are used. Monte Carlo draws come from the stream as given, so every
    parameter value sees the same assignment draws.
    """

    stat: object
    mech: object
    eps: Optional[float] = None
    draws: Optional[int] = None
    cap: int = EXACT_SUPPORT_LIMIT
    normalize: bool = True
    kind = "coarsened"

    def epsilon(self, n) -> float:
        return float(self.eps) if self.eps is not None else coarsening_schedule(self.stat.k).eps(n)

    def _log_norm(self, n):
        if not self.normalize:
            return 0.0
        return self.stat.k * np.log(2 * self.epsilon(n) * np.sqrt(n))

    def neighborhood_mass(self, model, theta, study, s_obs=None, rng=None):
        """``(mass, hits, total)``: probability of the neighborhood, the
        number of support points or draws inside it, and their count."""
        vals, w, _ = _statistic_support(self, model, theta, study, rng)
        obs = _obs(self.stat, study, s_obs, as_values(theta))
        eps = self.epsilon(study.n)
        inside = np.all(np.abs(vals - obs) <= eps, axis=1)
        return float(w[inside].sum()), int(inside.sum()), int(w.size)

    def log_likelihood(self, model, theta, study, s_obs=None, rng=None):
        mass, _, _ = self.neighborhood_mass(model, theta, study, s_obs, rng)
        if mass <= 0:
            return -np.inf
        return float(np.log(mass) - self._log_norm(study.n))

    def log_likelihood_grid(self, model, thetas, study, s_obs=None, rng=None):
        t = _theta_grid(model, thetas)
        if not _constant_dim_fast(model, self.stat, self.mech):
            return super().log_likelihood_grid(model, t, study, s_obs, rng)
        grid = t[:, 0]
        order = np.argsort(grid)
        A, w, _ = _draws_or_support(self, study, rng)
        d_y, c = _dim_lines(study, A)
        ok = np.isfinite(d_y)
        d_y, c, w = d_y[ok], c[ok], w[ok] / w[ok].sum()
        obs = float(_obs(self.stat, study, s_obs)[0])
        eps = self.epsilon(study.n)
        flat = np.abs(c) < 1e-12
        always = flat & (np.abs(d_y - obs) <= eps)
        with np.errstate(divide="ignore", invalid="ignore"):
            lo = np.where(flat, np.nan, (obs - eps - d_y) / c)
            hi = np.where(flat, np.nan, (obs + eps - d_y) / c)
        mass = _interval_mass(grid[order], lo, hi, w, always)
        out = np.empty_like(mass)
        out[order] = mass
        with np.errstate(divide="ignore"):
            return np.log(out) - self._log_norm(study.n)


@dataclass(frozen=True, eq=False)
class RoundedPMF(LikelihoodEngine):
    """PMF of the statistic rounded to a grid of width ``step``.

    A value ``s`` falls in cell ``floor(s / step + 1/2)``, so with
    ``step=1`` this is rounding to the nearest integer (halves go up).
    Enumeration and Monte Carlo follow :class:`CoarsenedMC`.
    """

    stat: object
    mech: object
    step: float = 1.0
    draws: Optional[int] = None
    cap: int = EXACT_SUPPORT_LIMIT
    kind = "rounded"

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("rounding step must be positive")

    def cell(self, s):
        return np.floor(np.asarray(s, dtype=float) / self.step + 0.5)

    def cell_mass(self, model, theta, study, s_obs=None, rng=None):
        vals, w, _ = _statistic_support(self, model, theta, study, rng)
        obs = _obs(self.stat, study, s_obs, as_values(theta))
        inside = np.all(self.cell(vals) == self.cell(obs), axis=1)
        return float(w[inside].sum()), int(inside.sum()), int(w.size)

    def log_likelihood(self, model, theta, study, s_obs=None, rng=None):
        mass, _, _ = self.cell_mass(model, theta, study, s_obs, rng)
        return float(np.log(mass)) if mass > 0 else -np.inf

    def log_likelihood_grid(self, model, thetas, study, s_obs=None, rng=None):
        t = _theta_grid(model, thetas)
        if not _constant_dim_fast(model, self.stat, self.mech):
            return super().log_likelihood_grid(model, t, study, s_obs, rng)
        grid = t[:, 0]
        order = np.argsort(grid)
        A, w, _ = _draws_or_support(self, study, rng)
        d_y, c = _dim_lines(study, A)
        ok = np.isfinite(d_y)
        d_y, c, w = d_y[ok], c[ok], w[ok] / w[ok].sum()
        obs = float(_obs(self.stat, study, s_obs)[0])
        k = self.cell(obs)
        lower, upper = (k - 0.5) * self.step, (k + 0.5) * self.step
        flat = np.abs(c) < 1e-12
        always = flat & (self.cell(d_y) == k)
        with np.errstate(divide="ignore", invalid="ignore"):
            lo = np.where(flat, np.nan, (lower - d_y) / c)
            hi = np.where(flat, np.nan, (upper - d_y) / c)
        mass = _interval_mass(grid[order], lo, hi, w, always, hi_side="left")
        out = np.empty_like(mass)
        out[order] = mass
        with np.errstate(divide="ignore"):
            return np.log(out)


def model_based_variance(theta, study: ObservedStudy) -> np.ndarray:
    """``v_n(theta) = Var(y_a - a theta) / (pi (1 - pi))`` with divisor
    ``n - 1`` and ``pi = n1 / n``; vectorized over ``theta``."""
    th = np.asarray(theta, dtype=float)
    y, a = study.y, study.a.astype(float)
    n = study.n
    pi = study.n1 / n
    var_y = np.var(y, ddof=1)
    cov_ya = np.cov(y, a, ddof=1)[0, 1]
    var_a = np.var(a, ddof=1)
    return (var_y - 2 * th * cov_ya + th * th * var_a) / (pi * (1 - pi))


@dataclass(frozen=True)
class AsymptoticGaussianDIM(LikelihoodEngine):
    """Gaussian approximation ``N(s_dim; theta, v_n(theta) / n)`` for the
    constant model with the difference in means.

    The variance moves with ``theta`` because the adjusted outcomes
    ``y_a - a theta`` change with it.
    """

    kind = "asymptotic"

    @property
    def stat(self):
        return DIM()

    def _check(self, model, study):
        if not isinstance(model, ConstantEffect):
            raise IncompatibleStatistic("the asymptotic engine assumes the constant-effect model")
        if study.n0 < 1 or study.n1 < 1:
            raise ZeroVariance("both groups must be non-empty")

    def log_likelihood(self, model, theta, study, s_obs=None, rng=None):
        return float(self.log_likelihood_grid(model, np.atleast_1d(as_values(theta)),
                                              study, s_obs, rng)[0])

    def log_likelihood_grid(self, model, thetas, study, s_obs=None, rng=None):
        self._check(model, study)
        th = _theta_grid(model, thetas)[:, 0]
        obs = float(_obs(DIM(), study, s_obs)[0])
        var = model_based_variance(th, study) / study.n
        if np.any(var <= 0):
            raise ZeroVariance("model-based variance is zero")
        return -0.5 * (obs - th) ** 2 / var - 0.5 * np.log(2 * np.pi * var)


def neyman_variance(study: ObservedStudy) -> float:
    """``S1^2 / n1 + S0^2 / n0`` with group variances taken about the group
    mean with divisor equal to the group size."""
    y, a = study.y, study.a
    if study.n0 < 2 or study.n1 < 2:
        raise ZeroVariance("each group needs at least two units")
    return float(np.var(y[a == 1]) / study.n1 + np.var(y[a == 0]) / study.n0)


@dataclass(frozen=True)
class NeymanGaussianDIM(LikelihoodEngine):
    """Sampling-distribution likelihood ``N(s_dim; theta, V)`` with the
    Neyman variance ``V`` fixed at the observed data."""

    kind = "neyman"

    @property
    def stat(self):
        return DIM()

    def log_likelihood(self, model, theta, study, s_obs=None, rng=None):
        return float(self.log_likelihood_grid(model, np.atleast_1d(as_values(theta)),
                                              study, s_obs, rng)[0])

    def log_likelihood_grid(self, model, thetas, study, s_obs=None, rng=None):
        th = _theta_grid(model, thetas)[:, 0]
        obs = float(_obs(DIM(), study, s_obs)[0])
        var = neyman_variance(study)
        if var <= 0:
            raise ZeroVariance("Neyman variance is zero")
        return -0.5 * (obs - th) ** 2 / var - 0.5 * np.log(2 * np.pi * var)


@dataclass(frozen=True, eq=False)
class SyntheticLikelihood(LikelihoodEngine):
    """Gaussian likelihood with Monte Carlo mean and covariance.

    Each evaluation draws ``m`` statistic values from the randomization
    (and imputation) distribution. With an :class:`RngStream`, the draws
    are keyed by the bit pattern of ``theta``, so repeated evaluations at
    the same point agree exactly while distinct points get fresh noise.
    """

    stat: object
    mech: object
    m: int = 1000
    jitter: float = 1e-8
    kind = "synthetic"

    def __post_init__(self):
        if self.m < self.stat.k + 2:
            raise ValidationError("synthetic likelihood needs m >= k + 2 draws")

    def moments(self, model, theta, study, rng):
        th = as_values(theta)
        draws = simulate_statistic(model, th, study, self.stat, self.mech, self.m,
                                   _stream_for(rng, th))
        draws = draws[np.all(np.isfinite(draws), axis=1)]
        if draws.shape[0] < self.stat.k + 2:
            raise SingularCovariance("too few finite statistic draws")
        return draws.mean(axis=0), np.atleast_2d(np.cov(draws, rowvar=False, ddof=1))

    def log_likelihood(self, model, theta, study, s_obs=None, rng=None):
        check_compatible(model, self.stat)
        mean, cov = self.moments(model, theta, study, rng)
        obs = _obs(self.stat, study, s_obs, as_values(theta))
        return gaussian_logpdf(obs, mean, cov, self.jitter)


def gaussian_logpdf(x, mean, cov, jitter=1e-8) -> float:
    """Multivariate normal log density via Cholesky, with one jitter retry."""
    k = mean.size
    cov = np.atleast_2d(cov)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        bump = jitter * np.trace(cov) / k
        try:
            if not bump > 0:
                raise np.linalg.LinAlgError
            L = np.linalg.cholesky(cov + bump * np.eye(k))
        except np.linalg.LinAlgError:
            raise SingularCovariance("covariance is singular after jitter") from None
    z = np.linalg.solve(L, np.asarray(x, dtype=float) - mean)
    return float(-0.5 * z @ z - np.log(np.diag(L)).sum() - 0.5 * k * np.log(2 * np.pi))


# -- functional interface ------------------------------------------------------------


def exact_log_likelihood(engine: ExactEnum, model, theta, study, s_obs=None) -> float:
    return engine.log_likelihood(model, theta, study, s_obs)


def coarsened_log_likelihood(engine: CoarsenedMC, model, theta, study, s_obs=None, rng=None) -> float:
    return engine.log_likelihood(model, theta, study, s_obs, rng)


def rounded_pmf_log_likelihood(engine: RoundedPMF, model, theta, study, s_obs=None, rng=None) -> float:
    return engine.log_likelihood(model, theta, study, s_obs, rng)


def asymptotic_log_likelihood_dim(theta, study: ObservedStudy, s_obs=None) -> float:
    return AsymptoticGaussianDIM().log_likelihood(ConstantEffect(), theta, study, s_obs)


def synthetic_log_likelihood(engine: SyntheticLikelihood, model, theta, study, s_obs=None,
                             rng=None) -> float:
    return engine.log_likelihood(model, theta, study, s_obs, rng)
