"""Assignment mechanisms, their sampling and enumeration, and the Fisherian
randomization test."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import Iterator, Optional

import numpy as np
from scipy.special import expit, log_expit

from .core import ObservedStudy, as_generator, as_values
from .errors import (DegenerateProbability, IncompatibleStatistic,
                     SupportTooLarge, ValidationError)
from .models import imputation_table, outcomes_under
from .statistics import check_compatible

EXACT_SUPPORT_LIMIT = 100_000
# chunk size for batched Monte Carlo draws
_CHUNK_CELLS = 2_000_000


@dataclass(frozen=True)
class CompleteRandomization:
    """All assignments with exactly ``n1`` treated units are equally likely."""

    n: int
    n1: int

    def __post_init__(self):
        if not (0 < self.n1 < self.n):
            raise ValidationError("complete randomization needs 0 < n1 < n")

    @property
    def needs_y1(self):
        return False


@dataclass(frozen=True, eq=False)
class SimpleBernoulli:
    """Independent ``a_i ~ Bernoulli(pi_i)``."""

    pi: np.ndarray

    def __post_init__(self):
        pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        if not np.all((pi > 0) & (pi < 1)):
            raise DegenerateProbability("Bernoulli probabilities must lie strictly in (0, 1)")
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)

    @property
    def n(self):
        return self.pi.size

    @property
    def needs_y1(self):
        return False


@dataclass(frozen=True)
class ConfoundedLogit:
    """``a_i ~ Bernoulli(pi_i)`` with ``logit(pi_i) = alpha + beta * y1_i``.

    A sensitivity-analysis mechanism: assignment depends on the treated
    potential outcome, which must be supplied (imputed) at evaluation time.
    """

    alpha: float
    beta: float
    n: int

    @property
    def needs_y1(self):
        return True

    def probabilities(self, y1) -> np.ndarray:
        y1 = np.asarray(y1, dtype=float)
        if y1.shape[-1] != self.n:
            raise ValidationError("y1 length does not match the mechanism")
        return expit(self.alpha + self.beta * y1)


def mechanism_for(study: ObservedStudy) -> CompleteRandomization:
    """Complete randomization with the observed group sizes."""
    return CompleteRandomization(study.n, study.n1)


def _bernoulli_probs(mech, y1):
    if isinstance(mech, SimpleBernoulli):
        return mech.pi
    if isinstance(mech, ConfoundedLogit):
        if y1 is None:
            raise ValidationError("ConfoundedLogit needs imputed y1 values")
        return mech.probabilities(y1)
    raise TypeError(f"not a Bernoulli-type mechanism: {mech!r}")


def sample_assignments(mech, rng, m: int, y1=None) -> np.ndarray:
    """Draw ``m`` assignment vectors; returns a boolean ``(m, n)`` array.

    For :class:`ConfoundedLogit`, ``y1`` may be a vector or an ``(m, n)``
    array (one imputation per draw).
    """
    gen = as_generator(rng)
    if isinstance(mech, CompleteRandomization):
        keys = gen.random((m, mech.n))
        # the n1 smallest iid uniform keys pick a uniformly random subset
        kth = np.partition(keys, mech.n1 - 1, axis=1)[:, mech.n1 - 1:mech.n1]
        return keys <= kth
    probs = _bernoulli_probs(mech, y1)
    return gen.random((m, mech.n)) < probs


def sample_assignment(mech, rng, y1=None) -> np.ndarray:
    """One assignment vector as 0/1 integers."""
    return sample_assignments(mech, rng, 1, y1)[0].astype(np.int8)


def support_size(mech) -> int:
    if isinstance(mech, CompleteRandomization):
        return comb(mech.n, mech.n1)
    return 2 ** mech.n


@dataclass(frozen=True)
class Enumeration:
    """Full support of a mechanism: boolean rows and their probabilities."""

    assignments: np.ndarray
    probs: np.ndarray

    def __len__(self):
        return self.probs.size

    def __iter__(self) -> Iterator:
        for row, p in zip(self.assignments, self.probs):
            yield row.astype(np.int8), float(p)


def enumerate_assignments(mech, cap: int = EXACT_SUPPORT_LIMIT, y1=None) -> Enumeration:
    """Every assignment in the support with its probability.

    Raises
    ------
    SupportTooLarge
        If the support has more than ``cap`` points.
    """
    size = support_size(mech)
    if size > cap:
        raise SupportTooLarge(f"support has {size} points, cap is {cap}")
    n = mech.n
    if isinstance(mech, CompleteRandomization):
        A = np.zeros((size, n), dtype=bool)
        for r, idx in enumerate(itertools.combinations(range(n), mech.n1)):
            A[r, list(idx)] = True
        return Enumeration(A, np.full(size, 1.0 / size))
    A = ((np.arange(size)[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    probs = _bernoulli_probs(mech, y1)
    logp = np.where(A, np.log(probs), np.log1p(-probs)).sum(axis=1)
    p = np.exp(logp)
    return Enumeration(A, p / p.sum())


def log_pmf_assignment(mech, a, y1=None) -> float:
    """Log probability of ``a``; ``-inf`` off the support."""
    a = np.asarray(a)
    if a.shape != (mech.n,) or not np.all((a == 0) | (a == 1)):
        return -np.inf
    if isinstance(mech, CompleteRandomization):
        if int(a.sum()) != mech.n1:
            return -np.inf
        return -np.log(comb(mech.n, mech.n1))
    if isinstance(mech, ConfoundedLogit):
        if y1 is None:
            raise ValidationError("ConfoundedLogit needs imputed y1 values")
        eta = mech.alpha + mech.beta * np.asarray(y1, dtype=float)
        return float(np.where(a == 1, log_expit(eta), log_expit(-eta)).sum())
    pi = mech.pi
    return float(np.where(a == 1, np.log(pi), np.log1p(-pi)).sum())


# -- randomization distribution ------------------------------------------------


def _y1_rows(imp, row_of, rng_gen, study):
    """Imputed y1 per draw (with noise for stochastic models)."""
    y1 = imp.y1[row_of].copy()
    if imp.stochastic:
        ctrl = study.a == 0
        sd = imp.noise_sd[row_of][:, None]
        y1[:, ctrl] += sd * rng_gen.standard_normal((y1.shape[0], int(ctrl.sum())))
    return y1


def simulate_statistic(model, theta, study: ObservedStudy, stat, mech, m: int, rng,
                       return_assignments=False):
    """Draw ``m`` values of ``stat`` from its randomization distribution.

    ``theta`` is one parameter vector, or an ``(m, p)`` array giving a
    separate parameter value per draw (posterior-averaged references).
    Assignments are redrawn each time; stochastic models also redraw the
    imputed counterfactuals.
    """
    check_compatible(model, stat)
    gen = as_generator(rng)
    t = np.asarray(getattr(theta, "values", theta), dtype=float)
    per_draw = t.ndim == 2
    if per_draw and t.shape[0] != m:
        raise ValueError("per-draw parameters need one row per draw")
    imp = None if per_draw else imputation_table(model, t, study)
    out = np.empty((m, stat.k))
    saved = [] if return_assignments else None
    step = max(1, _CHUNK_CELLS // max(study.n, 1))
    for start in range(0, m, step):
        stop = min(m, start + step)
        if per_draw:
            imp = imputation_table(model, t[start:stop], study)
            rows = np.arange(stop - start)
        else:
            rows = np.zeros(stop - start, dtype=np.intp)
        if mech.needs_y1:
            y1 = _y1_rows(imp, rows, gen, study)
            A = sample_assignments(mech, gen, stop - start, y1=y1)
            Y = np.where(A, y1, imp.y0[rows])
        else:
            A = sample_assignments(mech, gen, stop - start)
            Y = outcomes_under(imp, study, A, gen, rows)
        th_rows = t[start:stop] if per_draw else np.broadcast_to(np.atleast_1d(t), (stop - start, t.size))
        out[start:stop] = stat.evaluate(Y, A, th_rows if stat.uses_theta else None)
        if saved is not None:
            saved.append(A)
    if return_assignments:
        return out, np.concatenate(saved)
    return out


def enumerate_statistic(model, theta, study: ObservedStudy, stat, mech,
                        cap: int = EXACT_SUPPORT_LIMIT):
    """Statistic value at every assignment of a deterministic model.

    Returns ``(values, probs)`` with ``values`` of shape ``(support, k)``.
    """
    check_compatible(model, stat)
    if model.stochastic:
        raise ValidationError("enumeration needs a deterministic model")
    imp = imputation_table(model, theta, study)
    y1 = imp.y1[0] if mech.needs_y1 else None
    enum = enumerate_assignments(mech, cap, y1=y1)
    Y = outcomes_under(imp, study, enum.assignments)
    th = np.broadcast_to(as_values(theta), (len(enum), as_values(theta).size))
    vals = stat.evaluate(Y, enum.assignments, th if stat.uses_theta else None)
    return vals, enum.probs


# -- Fisherian randomization test ---------------------------------------------


@dataclass(frozen=True)
class PValue:
    """Randomization p-value with the counts behind it.

    For Monte Carlo tests ``value == (n_extreme + 1) / (n_draws + 1)``; for
    enumerated tests ``value`` is the exact tail mass, ``n_draws`` the
    support size and ``n_extreme`` the number of extreme atoms.
    """

    value: float
    n_draws: int
    n_extreme: int
    exact: bool

    @property
    def raw(self) -> float:
        """Share of draws at least as extreme, without the add-one term."""
        return self.n_extreme / self.n_draws


SIDES = ("two_sided_abs", "upper", "lower")


def tie_tolerance(value) -> float:
    return 1e-12 * max(1.0, abs(float(value)))


def _extreme(draws, obs, center, sided):
    tol = tie_tolerance(obs)
    if sided == "upper":
        return draws >= obs - tol
    if sided == "lower":
        return draws <= obs + tol
    return np.abs(draws - center) >= np.abs(obs - center) - tol


def frt_p_value(study: ObservedStudy, model, theta0, stat, mech, n_draws: int, rng,
                sided: str = "two_sided_abs", exact: Optional[bool] = None) -> PValue:
    """Randomization test of the sharp hypothesis ``theta = theta0``.

    The observed statistic is compared with its randomization distribution
    under the imputation implied by ``theta0``. With ``exact=None`` the
    support is enumerated when the model is deterministic and the support
    has at most ``1e5`` points; otherwise ``n_draws`` Monte Carlo draws are
    used with the add-one estimator.

    For the two-sided test the center is the randomization mean: the exact
    mean when enumerating, and the mean of the observed value pooled with
    the draws under Monte Carlo (which keeps the add-one p-value exactly
    valid, since the center is symmetric in all values).
    """
    if sided not in SIDES:
        raise ValueError(f"sided must be one of {SIDES}")
    if stat.k != 1:
        raise IncompatibleStatistic("the randomization test needs a scalar statistic")
    check_compatible(model, stat)
    th = as_values(theta0)
    obs = float(stat.observed(study, th if stat.uses_theta else None)[0])
    if exact is None:
        exact = (not model.stochastic) and support_size(mech) <= EXACT_SUPPORT_LIMIT
    if exact:
        vals, probs = enumerate_statistic(model, th, study, stat, mech)
        vals = vals[:, 0]
        center = float(probs @ vals)
        ext = _extreme(vals, obs, center, sided)
        return PValue(float(min(1.0, probs[ext].sum())), int(vals.size), int(ext.sum()), True)
    draws = simulate_statistic(model, th, study, stat, mech, n_draws, rng)[:, 0]
    center = (draws.sum() + obs) / (n_draws + 1)
    n_ext = int(_extreme(draws, obs, center, sided).sum())
    return PValue((n_ext + 1) / (n_draws + 1), int(n_draws), n_ext, False)
