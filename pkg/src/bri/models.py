"""Treatment effect models and prior distributions.

A model maps the observed outcomes to the potential outcomes under other
assignment vectors. :class:`ConstantEffect` is bijective, so every
counterfactual is a deterministic function of the observed data. The other
three models are stochastic and unidirectional: they describe ``y1`` given
``y0`` and leave ``y0`` for treated units unspecified.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import special, stats

from .core import ObservedStudy, ParamVector, as_generator, as_values
from .errors import DirectionViolation, QuadratureFailure, UnsupportedModel

BIJECTIVE = "bijective"
UNIDIRECTIONAL = "unidirectional_to_y1"

# -- effect models -----------------------------------------------------------


@dataclass(frozen=True)
class ConstantEffect:
    """``y1 = y0 + theta`` for every unit."""

    name: str = field(default="constant", init=False)
    param_names: Tuple[str, ...] = field(default=("theta",), init=False)
    direction: str = field(default=BIJECTIVE, init=False)

    @property
    def stochastic(self):
        return False


@dataclass(frozen=True)
class GaussianShift:
    """``y1 | y0 ~ Normal(alpha + y0, sigma^2)``."""

    name: str = field(default="gaussian_shift", init=False)
    param_names: Tuple[str, ...] = field(default=("alpha", "sigma"), init=False)
    direction: str = field(default=UNIDIRECTIONAL, init=False)

    @property
    def stochastic(self):
        return True


@dataclass(frozen=True)
class GaussianRegression:
    """``y1 | y0 ~ Normal(alpha + beta * y0, sigma^2)``."""

    name: str = field(default="gaussian_regression", init=False)
    param_names: Tuple[str, ...] = field(default=("alpha", "beta", "sigma"), init=False)
    direction: str = field(default=UNIDIRECTIONAL, init=False)

    @property
    def stochastic(self):
        return True


@dataclass(frozen=True)
class MonotoneSpline:
    """``y1 | y0 ~ Normal(alpha + g(y0, beta), sigma^2)`` on a standardized
    scale, where ``g(z, beta) = int_0^z exp(beta0 + beta1 t + beta2 t^2 +
    beta3 t^3) dt`` is increasing in ``z``.

    Outcomes are standardized as ``(y - center) / scale`` before ``g`` is
    applied and imputations are mapped back to the original scale, so
    ``alpha`` and ``sigma`` live on the standardized scale.
    """

    center: float = 0.0
    scale: float = 1.0
    name: str = field(default="monotone_spline", init=False)
    param_names: Tuple[str, ...] = field(
        default=("alpha", "beta0", "beta1", "beta2", "beta3", "sigma"), init=False)
    direction: str = field(default=UNIDIRECTIONAL, init=False)

    def __post_init__(self):
        if not (np.isfinite(self.center) and np.isfinite(self.scale) and self.scale > 0):
            raise ValueError("spline standardization needs finite center and scale > 0")

    @property
    def stochastic(self):
        return True

    @classmethod
    def standardized_for(cls, study: ObservedStudy) -> "MonotoneSpline":
        """Standardize by the mean and standard deviation of observed outcomes."""
        return cls(center=float(np.mean(study.y)), scale=float(np.std(study.y, ddof=1)))


@dataclass(frozen=True, eq=False)
class Partial:
    """A model with some parameters held at fixed values.

    ``Partial(GaussianShift(), {"sigma": 1.0})`` has the single free
    parameter ``alpha``.
    """

    base: object
    fixed: dict

    def __post_init__(self):
        unknown = set(self.fixed) - set(self.base.param_names)
        if unknown:
            raise ValueError(f"unknown parameters {sorted(unknown)} for {self.base.name}")
        object.__setattr__(self, "fixed", dict(self.fixed))

    @property
    def name(self):
        return self.base.name

    @property
    def param_names(self):
        return tuple(p for p in self.base.param_names if p not in self.fixed)

    @property
    def direction(self):
        return self.base.direction

    @property
    def stochastic(self):
        return self.base.stochastic

    def expand(self, thetas) -> np.ndarray:
        """Full parameter rows for the base model."""
        t = np.atleast_2d(np.asarray(thetas, dtype=float))
        cols, j = [], 0
        for p in self.base.param_names:
            if p in self.fixed:
                cols.append(np.full(t.shape[0], float(self.fixed[p])))
            else:
                cols.append(t[:, j])
                j += 1
        return np.column_stack(cols)


def _unwrap(model, thetas):
    """Base model and full-width parameter rows."""
    t = _theta_rows(model, thetas)
    if isinstance(model, Partial):
        return model.base, model.expand(t)
    return model, t


MODEL_TYPES = {
    "constant": ConstantEffect,
    "gaussian_shift": GaussianShift,
    "gaussian_regression": GaussianRegression,
    "monotone_spline": MonotoneSpline,
}


def _theta_rows(model, theta, m=None) -> np.ndarray:
    """Coerce ``theta`` to shape ``(rows, p)``."""
    t = np.asarray(theta.values if isinstance(theta, ParamVector) else theta, dtype=float)
    p = len(model.param_names)
    if t.ndim <= 1:
        t = np.atleast_1d(t)
        if t.size != p:
            raise ValueError(f"{model.name} expects {p} parameters, got {t.size}")
        t = t[None, :]
    elif t.shape[1] != p:
        raise ValueError(f"{model.name} expects {p} parameters, got {t.shape[1]}")
    return t


# -- spline quadrature --------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)
_REFINE_RTOL = 1e-8


def _gl_panel(beta, lo, hi):
    """32-node Gauss-Legendre integral of exp(poly) over [lo, hi], vectorized."""
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    t = mid[..., None] + half[..., None] * _GL_NODES
    b0, b1, b2, b3 = (beta[..., j, None] for j in range(4))
    with np.errstate(over="ignore", invalid="ignore"):
        vals = np.exp(b0 + t * (b1 + t * (b2 + t * b3)))
        return half * (vals @ _GL_WEIGHTS)


def spline_mean(beta, y0) -> np.ndarray:
    """Evaluate ``g(y0, beta) = int_0^y0 exp(sum_j beta_j t^j) dt``.

    Parameters
    ----------
    beta : array_like, shape (4,) or (m, 4)
        Polynomial coefficients ``beta0..beta3``. A 2-d array gives one row
        of coefficients per row of the output.
    y0 : array_like
        Upper integration limits (already on the standardized scale).

    Returns
    -------
    ndarray
        Broadcast of ``beta`` rows against ``y0``.

    Notes
    -----
    A single 32-node Gauss-Legendre panel is compared with two half-width
    panels; where they disagree by more than ``1e-8`` relative, the
    two-panel value is returned.
    """
    beta = np.asarray(beta, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    if beta.shape[-1] != 4:
        raise ValueError("beta must have 4 coefficients")
    if beta.ndim == 2:
        # one coefficient row per output row
        lim = np.broadcast_to(y0, (beta.shape[0],) + y0.shape[-1:]) if y0.ndim \
            else np.full(beta.shape[0], float(y0))
        beta_b = np.broadcast_to(beta.reshape((beta.shape[0],) + (1,) * (lim.ndim - 1) + (4,)),
                                 lim.shape + (4,))
    else:
        lim = y0
        beta_b = np.broadcast_to(beta, y0.shape + (4,))
    zero = np.zeros_like(lim)
    one = _gl_panel(beta_b, zero, lim)
    half = 0.5 * lim
    two = _gl_panel(beta_b, zero, half) + _gl_panel(beta_b, half, lim)
    out = np.where(np.abs(two - one) > _REFINE_RTOL * np.abs(two), two, one)
    if not np.all(np.isfinite(out)):
        raise QuadratureFailure("spline integrand overflowed")
    return out


# -- imputation -----------------------------------------------------------------


def model_conditional_moments(model, theta, y0):
    """Mean vector and variance of ``y1`` given ``y0`` under ``model``.

    The constant model is returned with variance zero so that callers can
    treat all models alike.
    """
    model, t = _unwrap(model, theta)
    t = t[0]
    y0 = np.asarray(y0, dtype=float)
    if isinstance(model, ConstantEffect):
        return y0 + t[0], 0.0
    if isinstance(model, GaussianShift):
        return t[0] + y0, float(t[1] ** 2)
    if isinstance(model, GaussianRegression):
        return t[0] + t[1] * y0, float(t[2] ** 2)
    if isinstance(model, MonotoneSpline):
        z = (y0 - model.center) / model.scale
        mean_std = t[0] + spline_mean(t[1:5], z)
        return model.center + model.scale * mean_std, float((model.scale * t[5]) ** 2)
    raise UnsupportedModel(f"unknown model {model!r}")


def _conditional_mean_rows(model, thetas, y0):
    """Conditional means of ``y1`` for each parameter row; shape (rows, len(y0))."""
    if isinstance(model, ConstantEffect):
        return y0[None, :] + thetas[:, :1]
    if isinstance(model, GaussianShift):
        return thetas[:, :1] + y0[None, :]
    if isinstance(model, GaussianRegression):
        return thetas[:, :1] + thetas[:, 1:2] * y0[None, :]
    if isinstance(model, MonotoneSpline):
        z = (y0 - model.center) / model.scale
        g = spline_mean(thetas[:, 1:5], z)
        return model.center + model.scale * (thetas[:, :1] + g)
    raise UnsupportedModel(f"unknown model {model!r}")


def _noise_sd_rows(model, thetas):
    if isinstance(model, ConstantEffect):
        return np.zeros(thetas.shape[0])
    if isinstance(model, GaussianShift):
        return thetas[:, 1]
    if isinstance(model, GaussianRegression):
        return thetas[:, 2]
    if isinstance(model, MonotoneSpline):
        return model.scale * thetas[:, 5]
    raise UnsupportedModel(f"unknown model {model!r}")


def impute(model, theta, y_a, a, a_new, rng=None) -> np.ndarray:
    """Potential outcomes under ``a_new`` given observed ``y_a`` under ``a``.

    Bijective models impute deterministically. Unidirectional models can
    only produce ``y1`` for control units (with fresh Gaussian noise drawn
    from ``rng``); asking for ``y0`` of a treated unit raises
    :class:`DirectionViolation`.
    """
    y_a = np.asarray(y_a, dtype=float)
    a = np.asarray(a)
    a_new = np.asarray(a_new)
    if isinstance(model, ConstantEffect):
        t = _theta_rows(model, theta)[0, 0]
        return y_a + (a_new - a) * t
    if isinstance(model, Partial) and isinstance(model.base, ConstantEffect):
        return impute(model.base, model.expand(_theta_rows(model, theta))[0], y_a, a, a_new)
    if model.direction != UNIDIRECTIONAL:
        raise UnsupportedModel(f"unknown model {model!r}")
    if np.any((a == 1) & (a_new == 0)):
        raise DirectionViolation(f"{model.name} cannot impute y0 for treated units")
    out = y_a.copy()
    need = (a == 0) & (a_new == 1)
    if np.any(need):
        if rng is None:
            raise ValueError("stochastic imputation needs an rng")
        mean, var = model_conditional_moments(model, theta, y_a[need])
        gen = as_generator(rng)
        out[need] = mean + np.sqrt(var) * gen.standard_normal(int(need.sum()))
    return out


@dataclass(frozen=True)
class Imputation:
    """Full potential-outcome table implied by a model at one or more
    parameter values.

    ``y0`` and ``y1`` have shape ``(rows, n)``. For unidirectional models
    ``y0`` is NaN for treated units and ``y1`` for control units is the
    conditional mean; ``noise_sd`` (per row) gives the spread of the draws
    that :func:`outcomes_under` adds.
    """

    y0: np.ndarray
    y1: np.ndarray
    noise_sd: np.ndarray
    stochastic: bool


def imputation_table(model, thetas, study: ObservedStudy) -> Imputation:
    """Model-implied potential outcomes for each row of ``thetas``."""
    model, t = _unwrap(model, thetas)
    y, a = study.y, study.a
    if isinstance(model, ConstantEffect):
        y0 = y[None, :] - a[None, :] * t[:, :1]
        y1 = y[None, :] + (1 - a)[None, :] * t[:, :1]
        return Imputation(y0, y1, np.zeros(t.shape[0]), False)
    ctrl = a == 0
    mean_ctrl = _conditional_mean_rows(model, t, y[ctrl])
    y1 = np.broadcast_to(y, (t.shape[0], y.size)).copy()
    y1[:, ctrl] = mean_ctrl
    y0 = np.where(ctrl, y, np.nan)[None, :].repeat(t.shape[0], axis=0)
    return Imputation(y0, y1, _noise_sd_rows(model, t), True)


def outcomes_under(imp: Imputation, study: ObservedStudy, A: np.ndarray,
                   rng=None, row_of=None) -> np.ndarray:
    """Outcome matrix for assignment rows ``A`` (shape (m, n)).

    ``row_of`` maps each assignment row to a row of the imputation table
    (default: all rows use table row 0). Noise is drawn only where an
    imputed ``y1`` is actually observed under the new assignment.
    """
    A = np.asarray(A, dtype=bool)
    m = A.shape[0]
    if row_of is None:
        row_of = np.zeros(m, dtype=np.intp)
    if imp.y0.shape[0] == 1:
        # one parameter value: broadcast instead of copying rows
        y0, y1, noise_sd = imp.y0[0], imp.y1[0], np.broadcast_to(imp.noise_sd[:1], (m,))
    else:
        y0, y1, noise_sd = imp.y0[row_of], imp.y1[row_of], imp.noise_sd[row_of]
    Y = np.where(A, y1, y0)
    if imp.stochastic:
        ctrl = study.a == 0
        need = A & ctrl[None, :]
        count = int(need.sum())
        if count:
            if imp.y0.shape[0] == 1:
                sd = float(noise_sd[0])
            else:
                sd = np.broadcast_to(noise_sd[:, None], A.shape)[need]
            if np.any(sd > 0):
                gen = as_generator(rng)
                # flat indices scatter faster than a 2-D boolean mask
                Y.reshape(-1)[np.flatnonzero(need)] += sd * gen.standard_normal(count)
    return Y


# -- priors -----------------------------------------------------------------------

TRUNCATION_SDS = 10.0


@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("Normal sd must be positive")

    @property
    def dist(self):
        return stats.norm(self.mean, self.sd)

    @property
    def bounds(self):
        return (self.mean - TRUNCATION_SDS * self.sd, self.mean + TRUNCATION_SDS * self.sd)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.mean) / self.sd
        return -0.5 * z * z - np.log(self.sd) - 0.5 * np.log(2 * np.pi)


@dataclass(frozen=True)
class HalfNormal:
    sd: float = 1.0

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("HalfNormal sd must be positive")

    @property
    def dist(self):
        return stats.halfnorm(scale=self.sd)

    @property
    def bounds(self):
        return (0.0, TRUNCATION_SDS * self.sd)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        z = x / self.sd
        val = np.log(2.0) - 0.5 * z * z - np.log(self.sd) - 0.5 * np.log(2 * np.pi)
        return np.where(x > 0, val, -np.inf)


@dataclass(frozen=True)
class Gamma:
    """Gamma prior with an explicit parameterization.

    Give exactly one of ``rate`` or ``scale``.
    """

    shape: float = 1.0
    rate: Optional[float] = None
    scale: Optional[float] = None

    def __post_init__(self):
        if (self.rate is None) == (self.scale is None):
            raise ValueError("Gamma needs exactly one of rate or scale")
        if not self.shape > 0 or not self._scale > 0:
            raise ValueError("Gamma shape and scale must be positive")

    @property
    def _scale(self):
        return self.scale if self.scale is not None else 1.0 / self.rate

    @property
    def dist(self):
        return stats.gamma(self.shape, scale=self._scale)

    @property
    def bounds(self):
        mean = self.shape * self._scale
        sd = np.sqrt(self.shape) * self._scale
        return (0.0, mean + TRUNCATION_SDS * sd)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = ((self.shape - 1) * np.log(np.where(x > 0, x, 1.0)) - x / self._scale
                   - special.gammaln(self.shape) - self.shape * np.log(self._scale))
        return np.where(x > 0, val, -np.inf)


@dataclass(frozen=True)
class Uniform:
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("Uniform needs hi > lo")

    @property
    def dist(self):
        return stats.uniform(self.lo, self.hi - self.lo)

    @property
    def bounds(self):
        return (self.lo, self.hi)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, -np.log(self.hi - self.lo), -np.inf)


@dataclass(frozen=True)
class Prior:
    """Independent product prior, one component per parameter."""

    components: Tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ValueError("prior needs at least one component")

    def __len__(self):
        return len(self.components)

    @property
    def bounds(self) -> np.ndarray:
        return np.array([c.bounds for c in self.components], dtype=float)

    def sample(self, rng, size=None) -> np.ndarray:
        gen = as_generator(rng)
        cols = [c.dist.rvs(size=size, random_state=gen) for c in self.components]
        return np.stack(cols, axis=-1)


def log_prior(prior: Prior, theta) -> float:
    """Sum of per-coordinate log densities.

    Outside the support, or outside the compact box of ten prior standard
    deviations that stands in for a compact parameter space, the value is
    ``-inf``.
    """
    t = as_values(theta)
    if t.size != len(prior):
        raise ValueError(f"prior has {len(prior)} coordinates, theta has {t.size}")
    return float(log_prior_rows(prior, t[None, :])[0])


def log_prior_rows(prior: Prior, thetas) -> np.ndarray:
    """Vectorized :func:`log_prior` over rows of ``thetas``."""
    t = np.atleast_2d(np.asarray(thetas, dtype=float))
    total = np.zeros(t.shape[0])
    for j, comp in enumerate(prior.components):
        lo, hi = comp.bounds
        lp = comp.logpdf(t[:, j])
        total = total + np.where((t[:, j] >= lo) & (t[:, j] <= hi), lp, -np.inf)
    return total


def default_prior(model) -> Prior:
    """Weakly informative defaults, useful for demos and smoke tests."""
    if isinstance(model, ConstantEffect):
        return Prior((Normal(0.0, 10.0),))
    if isinstance(model, GaussianShift):
        return Prior((Normal(0.0, 10.0), HalfNormal(10.0)))
    if isinstance(model, GaussianRegression):
        return Prior((Normal(0.0, 10.0), Gamma(1.0, rate=1.0), HalfNormal(10.0)))
    if isinstance(model, MonotoneSpline):
        return Prior((Normal(0.0, 2.0), Normal(0.0, 1.0), Normal(0.0, 0.5),
                      Normal(0.0, 0.2), Normal(0.0, 0.1), HalfNormal(1.0)))
    raise UnsupportedModel(f"unknown model {model!r}")
