"""Posterior model checks: posterior-averaged randomization tests of
discrepancy statistics and covariate moderation tests."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import ObservedStudy, RngStream, as_generator
from .errors import ConstantCovariate, IncompatibleStatistic, ValidationError
from .models import ConstantEffect
from .randomization import frt_p_value, mechanism_for, simulate_statistic
from .statistics import MomentVector, SlopeDifference, check_compatible


@dataclass(frozen=True, eq=False)
class CheckResult:
    """One posterior predictive check.

    ``u`` is the midpoint quantile of the observed discrepancy in its pooled
    reference distribution. With ``combine="pooled"``, ``p_value = 2 min(u,
    1 - u)``; with ``combine="averaged"`` it is the posterior mean of the
    per-draw two-sided p-values. The pooled reference and the observed
    discrepancy are kept for plotting; when the discrepancy depends on
    ``theta`` the observed value varies by draw and ``observed`` holds one
    value per reference draw.
    """

    name: str
    p_value: float
    u: float
    n_posterior_draws: int
    n_rand_draws: int
    combine: str = "pooled"
    reference: Optional[np.ndarray] = None
    observed: Optional[np.ndarray] = None


def two_sided_p(u: float) -> float:
    """``2 (0.5 - |0.5 - u|)``, i.e. ``2 min(u, 1 - u)``."""
    return float(2.0 * (0.5 - abs(0.5 - u)))


def midpoint_quantile(reference, observed) -> float:
    """``(#{ref < obs} + 0.5 #{ref == obs}) / #ref`` with ties judged to a
    ``1e-12`` relative tolerance; ``observed`` may vary per reference draw."""
    ref = np.asarray(reference, dtype=float)
    obs = np.broadcast_to(np.asarray(observed, dtype=float), ref.shape)
    tol = 1e-12 * np.maximum(1.0, np.abs(obs))
    less = ref < obs - tol
    equal = np.abs(ref - obs) <= tol
    return float((less.sum() + 0.5 * equal.sum()) / ref.size)


def _draw_matrix(posterior_draws, p):
    d = posterior_draws
    if hasattr(d, "flat_draws"):
        d = d.flat_draws()
    d = np.asarray(d, dtype=float)
    if d.ndim == 1:
        d = d[:, None] if p == 1 else d[None, :]
    if d.shape[0] == 0:
        raise ValidationError("posterior draws are empty")
    if d.shape[1] != p:
        raise ValidationError(f"draws have {d.shape[1]} columns, model has {p} parameters")
    return d


def pooled_reference(posterior_draws, model, discrepancy, study: ObservedStudy, mech, rng,
                     rand_draws_per_theta: int = 1) -> Tuple[np.ndarray, np.ndarray, int]:
    """Reference draws of ``discrepancy`` pooled over posterior draws.

    Returns ``(reference, observed, n_posterior_draws)`` where both arrays
    have shape ``(n_posterior_draws * rand_draws_per_theta, k)``.
    """
    check_compatible(model, discrepancy)
    if rand_draws_per_theta < 1:
        raise ValueError("rand_draws_per_theta must be >= 1")
    thetas = _draw_matrix(posterior_draws, len(model.param_names))
    per = np.repeat(thetas, rand_draws_per_theta, axis=0)
    gen = as_generator(rng)
    if rand_draws_per_theta == 1:
        ref = simulate_statistic(model, per, study, discrepancy, mech, per.shape[0], gen)
    else:
        # one imputation table per posterior draw rather than per reference draw
        ref = np.concatenate([simulate_statistic(model, t, study, discrepancy, mech,
                                                 rand_draws_per_theta, gen) for t in thetas])
    if discrepancy.uses_theta:
        obs = discrepancy.evaluate(np.broadcast_to(study.y, (per.shape[0], study.n)),
                                   np.broadcast_to(study.a.astype(bool), (per.shape[0], study.n)),
                                   per)
    else:
        obs = np.broadcast_to(discrepancy.observed(study), ref.shape)
    return ref, np.asarray(obs), thetas.shape[0]


COMBINE_RULES = ("pooled", "averaged")


def _check_combine(combine, rand_draws_per_theta):
    if combine not in COMBINE_RULES:
        raise ValueError(f"combine must be one of {COMBINE_RULES}, got {combine!r}")
    if combine == "averaged" and rand_draws_per_theta < 2:
        raise ValueError("combine='averaged' needs rand_draws_per_theta >= 2")


def _averaged_p(ref, obs, n_post):
    ps = []
    for r, o in zip(ref.reshape(n_post, -1), obs.reshape(n_post, -1)):
        ok = np.isfinite(r) & np.isfinite(o)
        if ok.any():
            ps.append(two_sided_p(midpoint_quantile(r[ok], o[ok])))
    return float(np.mean(ps))


def _result(name, ref, obs, n_post, combine="pooled"):
    ok = np.isfinite(ref) & np.isfinite(obs)
    if not ok.any():
        raise ValidationError(f"discrepancy {name!r} is undefined on every reference draw")
    u = midpoint_quantile(ref[ok], obs[ok])
    p = two_sided_p(u) if combine == "pooled" else _averaged_p(ref, obs, n_post)
    return CheckResult(name=name, p_value=p, u=u, n_posterior_draws=n_post,
                       n_rand_draws=int(ref.size), combine=combine, reference=ref, observed=obs)


def posterior_predictive_p(posterior_draws, model, discrepancy, study: ObservedStudy, mech, rng,
                           rand_draws_per_theta: int = 1, combine: str = "pooled") -> CheckResult:
    """Posterior-averaged randomization check of a scalar discrepancy.

    For each posterior draw, ``rand_draws_per_theta`` assignments (and, for
    stochastic models, imputations) are simulated. ``combine="pooled"``
    locates the observed discrepancy in the pooled reference distribution;
    ``combine="averaged"`` runs one randomization test per posterior draw
    and averages the resulting p-values, which needs at least two
    reference draws per posterior draw.
    """
    if discrepancy.k != 1:
        raise IncompatibleStatistic("posterior_predictive_p needs a scalar discrepancy")
    _check_combine(combine, rand_draws_per_theta)
    ref, obs, n_post = pooled_reference(posterior_draws, model, discrepancy, study, mech, rng,
                                        rand_draws_per_theta)
    return _result(discrepancy.labels[0], ref[:, 0], obs[:, 0], n_post, combine)


def moment_checks(posterior_draws, model, study: ObservedStudy, mech, rng,
                  rand_draws_per_theta: int = 1, combine: str = "pooled"):
    """Two-sided checks of the first five centered and scaled moments of the
    treated outcomes. All five share the same reference draws; ``combine``
    is as in :func:`posterior_predictive_p`."""
    _check_combine(combine, rand_draws_per_theta)
    stat = MomentVector((1, 2, 3, 4, 5))
    ref, obs, n_post = pooled_reference(posterior_draws, model, stat, study, mech, rng,
                                        rand_draws_per_theta)
    return [_result(label, ref[:, j], obs[:, j], n_post, combine)
            for j, label in enumerate(stat.labels)]


@dataclass(frozen=True)
class ModerationResult:
    """Per-covariate randomization p-values for ``|slope1 - slope0|``."""

    names: tuple
    p_values: np.ndarray
    statistics: np.ndarray

    @property
    def min_p(self) -> float:
        return float(np.min(self.p_values))


def moderation_check(study: ObservedStudy, X=None, mech=None, rng=None, draws: int = 10_000,
                     names=None) -> ModerationResult:
    """Randomization tests of treatment-effect moderation, one per column of
    ``X`` (defaults to the study covariates).

    Under the sharp null of no effect the outcomes are fixed, and the
    observed absolute slope difference is compared with its randomization
    distribution (upper tail, add-one Monte Carlo p-value).
    """
    X = study.X if X is None else np.asarray(X, dtype=float)
    if X is None:
        raise ValidationError("moderation checks need covariates")
    X = X[:, None] if X.ndim == 1 else X
    if X.shape[0] != study.n:
        raise ValidationError("covariate rows do not match the study")
    mech = mechanism_for(study) if mech is None else mech
    root = rng if isinstance(rng, RngStream) else RngStream(int(as_generator(rng).integers(2 ** 63)))
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    model = ConstantEffect()
    ps, obs = [], []
    for j in range(X.shape[1]):
        if np.ptp(X[:, j]) == 0:
            raise ConstantCovariate(f"covariate {names[j]!r} is constant")
        stat = SlopeDifference(X[:, j])
        res = frt_p_value(study, model, [0.0], stat, mech, draws, root.spawn(j).generator(),
                          sided="upper", exact=False)
        ps.append(res.value)
        obs.append(float(stat.observed(study)[0]))
    return ModerationResult(names=names, p_values=np.array(ps), statistics=np.array(obs))
