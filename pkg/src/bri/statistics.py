"""Statistics and discrepancy variables ``s = f(y_a, a)``.

Every statistic is a small frozen object with a batched ``evaluate(Y, A,
theta=None)`` that maps outcome rows ``Y`` and assignment rows ``A`` (both
shape ``(m, n)``) to an ``(m, k)`` array. Rows where the statistic is
undefined (an empty group, say) come back as NaN. ``depends_on`` lists the
potential outcomes the statistic reads, which gates pairing with
unidirectional models.

Module-level functions such as :func:`dim` and :func:`rank_sum` evaluate a
single observed study and raise on undefined inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import stats as sps

from .core import ObservedStudy
from .errors import (ConstantCovariate, DegenerateProbability, EmptyGroup,
                     IncompatibleStatistic, SingularDesign, ZeroVariance)

Y0 = "y0"
Y1 = "y1"


def _rows(Y, A):
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    A = np.atleast_2d(np.asarray(A)).astype(bool)
    if Y.shape != A.shape:
        Y = np.broadcast_to(Y, A.shape)
    return Y, A


def _theta_col(theta):
    """First parameter coordinate per row, from a scalar, vector or matrix."""
    th = np.asarray(theta, dtype=float)
    if th.ndim < 2:
        th = th.reshape(1, -1)
    return th[:, 0]


def _masked_mean(Y, M):
    """Row means of ``Y`` over entries where ``M`` is true; NaN if none."""
    cnt = M.sum(axis=1)
    tot = np.where(M, Y, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan), cnt


def _masked_var(Y, M, mean, ddof=0):
    cnt = M.sum(axis=1)
    dev = np.where(M, Y - mean[:, None], 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > ddof, (dev * dev).sum(axis=1) / np.maximum(cnt - ddof, 1), np.nan)


def _validate_pi(pi, n):
    pi = np.broadcast_to(np.asarray(pi, dtype=float), (n,))
    if not np.all((pi > 0) & (pi < 1)):
        raise DegenerateProbability("assignment probabilities must lie strictly in (0, 1)")
    return pi


class Statistic:
    """Base class; subclasses set ``k``, ``depends_on`` and ``name``."""

    k: int = 1
    depends_on: frozenset = frozenset({Y0, Y1})
    uses_theta: bool = False
    name: str = "statistic"

    def evaluate(self, Y, A, theta=None) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def linear_weights(self, A) -> Optional[np.ndarray]:
        """Weights ``W`` with ``s = (W * Y).sum(1) + offset`` when ``k == 1``
        and the statistic is linear in outcomes; None otherwise."""
        return None

    def linear_offset(self, A, theta=None):
        return 0.0

    def observed(self, study: ObservedStudy, theta=None) -> np.ndarray:
        th = None if theta is None else np.atleast_2d(np.asarray(theta, dtype=float))
        out = self.evaluate(study.y[None, :], study.a[None, :], th)[0]
        return out

    @property
    def labels(self) -> Tuple[str, ...]:
        if self.k == 1:
            return (self.name,)
        return tuple(f"{self.name}[{j}]" for j in range(self.k))


@dataclass(frozen=True)
class GroupMean0(Statistic):
    name: str = field(default="s0", init=False)
    depends_on: frozenset = field(default=frozenset({Y0}), init=False)

    def evaluate(self, Y, A, theta=None):
        Y, A = _rows(Y, A)
        return _masked_mean(Y, ~A)[0][:, None]

    def linear_weights(self, A):
        A = np.atleast_2d(A).astype(bool)
        c = (~A).sum(axis=1, keepdims=True)
        return np.where(~A, 1.0 / np.maximum(c, 1), 0.0)


@dataclass(frozen=True)
class GroupMean1(Statistic):
    name: str = field(default="s1", init=False)
    depends_on: frozenset = field(default=frozenset({Y1}), init=False)

    def evaluate(self, Y, A, theta=None):
        Y, A = _rows(Y, A)
        return _masked_mean(Y, A)[0][:, None]

    def linear_weights(self, A):
        A = np.atleast_2d(A).astype(bool)
        c = A.sum(axis=1, keepdims=True)
        return np.where(A, 1.0 / np.maximum(c, 1), 0.0)


@dataclass(frozen=True)
class DIM(Statistic):
    """Difference in group means ``s1 - s0``."""

    name: str = field(default="dim", init=False)

    def evaluate(self, Y, A, theta=None):
        Y, A = _rows(Y, A)
        return (_masked_mean(Y, A)[0] - _masked_mean(Y, ~A)[0])[:, None]

    def linear_weights(self, A):
        return GroupMean1().linear_weights(A) - GroupMean0().linear_weights(A)


@dataclass(frozen=True)
class DeltaControl(Statistic):
    """Difference-in-control-means discrepancy.

    Treated outcomes are mapped back to control by subtracting ``theta``
    (the constant-model imputation of ``y0``) and compared with the
    observed control mean, so the value equals ``dim - theta``.
    """

    name: str = field(default="d_delta0", init=False)
    uses_theta: bool = field(default=True, init=False)

    def evaluate(self, Y, A, theta=None):
        if theta is None:
            raise ValueError("d_delta0 needs theta")
        Y, A = _rows(Y, A)
        th = _theta_col(theta)
        imputed_y0_mean = _masked_mean(Y - th[:, None], A)[0]
        return (imputed_y0_mean - _masked_mean(Y, ~A)[0])[:, None]

    def linear_weights(self, A):
        return DIM().linear_weights(A)

    def linear_offset(self, A, theta=None):
        return -float(np.ravel(theta)[0])


@dataclass(frozen=True)
class GroupVar0(Statistic):
    """Control-group variance with divisor equal to the group size."""

    name: str = field(default="s02", init=False)
    depends_on: frozenset = field(default=frozenset({Y0}), init=False)

    def evaluate(self, Y, A, theta=None):
        Y, A = _rows(Y, A)
        m, _ = _masked_mean(Y, ~A)
        return _masked_var(Y, ~A, m)[:, None]


@dataclass(frozen=True)
class GroupVar1(Statistic):
    """Treated-group variance with divisor equal to the group size."""

    name: str = field(default="s12", init=False)
    depends_on: frozenset = field(default=frozenset({Y1}), init=False)

    def evaluate(self, Y, A, theta=None):
        Y, A = _rows(Y, A)
        m, _ = _masked_mean(Y, A)
        return _masked_var(Y, A, m)[:, None]


@dataclass(frozen=True)
class S12Pair(Statistic):
    """Treated mean and treated variance ``(s1, s12)``."""

    name: str = field(default="s1_s12", init=False)
    k: int = field(default=2, init=False)
    depends_on: frozenset = field(default=frozenset({Y1}), init=False)

    def evaluate(self, Y, A, theta=None):
        Y, A = _rows(Y, A)
        m, _ = _masked_mean(Y, A)
        return np.column_stack([m, _masked_var(Y, A, m)])


def _variance_pair(Y, A):
    m1, _ = _masked_mean(Y, A)
    m0, _ = _masked_mean(Y, ~A)
    return _masked_var(Y, ~A, m0), _masked_var(Y, A, m1)


@dataclass(frozen=True)
class VarLogRatio(Statistic):
    """``|log(s12 / s02)|``."""

    name: str = field(default="s2", init=False)

    def evaluate(self, Y, A, theta=None):
        Y, A = _rows(Y, A)
        v0, v1 = _variance_pair(Y, A)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(np.log(v1 / v0))[:, None]


@dataclass(frozen=True)
class VarMaxMinRatio(Statistic):
    """``max(s02, s12) / min(s02, s12)``."""

    name: str = field(default="var_ratio", init=False)

    def evaluate(self, Y, A, theta=None):
        Y, A = _rows(Y, A)
        v0, v1 = _variance_pair(Y, A)
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.maximum(v0, v1) / np.minimum(v0, v1))[:, None]


@dataclass(frozen=True)
class RankSum(Statistic):
    """Wilcoxon rank sum of the treated units, average ranks for ties."""

    name: str = field(default="rank_sum", init=False)

    def evaluate(self, Y, A, theta=None):
        Y, A = _rows(Y, A)
        ranks = sps.rankdata(Y, axis=1)
        return np.where(A, ranks, 0.0).sum(axis=1)[:, None]


@dataclass(frozen=True)
class MomentVector(Statistic):
    """Centered and scaled moments of treated outcomes.

    Order 1 is the mean, order 2 the standard deviation (divisor ``n1``),
    and order ``j >= 3`` is ``mean(((y - mean) / sd) ** j)`` over treated
    units.
    """

    orders: Tuple[int, ...] = (1, 2, 3, 4, 5)
    depends_on: frozenset = field(default=frozenset({Y1}), init=False)

    def __post_init__(self):
        orders = tuple(int(j) for j in self.orders)
        if not orders or min(orders) < 1:
            raise ValueError("moment orders must be positive integers")
        object.__setattr__(self, "orders", orders)

    @property
    def k(self):
        return len(self.orders)

    @property
    def name(self):
        return "moments"

    @property
    def labels(self):
        return tuple(f"m{j}" for j in self.orders)

    def evaluate(self, Y, A, theta=None):
        Y, A = _rows(Y, A)
        mean, cnt = _masked_mean(Y, A)
        sd = np.sqrt(_masked_var(Y, A, mean))
        out = np.empty((Y.shape[0], self.k))
        high = [j for j in self.orders if j >= 3]
        if high:
            with np.errstate(invalid="ignore", divide="ignore"):
                z = np.where(A, (Y - mean[:, None]) / sd[:, None], 0.0)
        # integer powers by repeated multiplication (much faster than **)
        sums = {}
        if high:
            power = z * z
            with np.errstate(invalid="ignore", over="ignore"):
                for j in range(3, max(high) + 1):
                    power *= z
                    if j in high:
                        sums[j] = power.sum(axis=1)
        for col, j in enumerate(self.orders):
            if j == 1:
                out[:, col] = mean
            elif j == 2:
                out[:, col] = sd
            else:
                with np.errstate(invalid="ignore", divide="ignore"):
                    out[:, col] = sums[j] / cnt
        return out


def StdMoment(j: int) -> MomentVector:
    """Single standardized moment of treated outcomes."""
    return MomentVector((j,))


@dataclass(frozen=True, eq=False)
class IPW(Statistic):
    """Mean of ``y {a / pi - (1 - a) / (1 - pi)}``."""

    pi: np.ndarray = None
    name: str = field(default="ipw", init=False)

    def __post_init__(self):
        pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        if not np.all((pi > 0) & (pi < 1)):
            raise DegenerateProbability("assignment probabilities must lie strictly in (0, 1)")
        object.__setattr__(self, "pi", pi)

    def evaluate(self, Y, A, theta=None):
        Y, A = _rows(Y, A)
        return (self.linear_weights(A) * np.where(np.isnan(Y), 0.0, Y)).sum(axis=1)[:, None]

    def linear_weights(self, A):
        A = np.atleast_2d(A).astype(float)
        pi = np.broadcast_to(self.pi, A.shape[1:])
        return (A / pi - (1 - A) / (1 - pi)) / A.shape[1]


@dataclass(frozen=True, eq=False)
class Hajek(Statistic):
    """Difference of inverse-probability-weighted group means."""

    pi: np.ndarray = None
    name: str = field(default="hajek", init=False)

    def __post_init__(self):
        pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        if not np.all((pi > 0) & (pi < 1)):
            raise DegenerateProbability("assignment probabilities must lie strictly in (0, 1)")
        object.__setattr__(self, "pi", pi)

    def evaluate(self, Y, A, theta=None):
        Y, A = _rows(Y, A)
        pi = np.broadcast_to(self.pi, Y.shape[1:])
        w1 = np.where(A, 1.0 / pi, 0.0)
        w0 = np.where(A, 0.0, 1.0 / (1 - pi))
        Yz = np.where(np.isnan(Y), 0.0, Y)
        with np.errstate(invalid="ignore", divide="ignore"):
            m1 = (w1 * Yz).sum(1) / w1.sum(1)
            m0 = (w0 * Yz).sum(1) / w0.sum(1)
        return (m1 - m0)[:, None]


@dataclass(frozen=True)
class TreatedFraction(Statistic):
    """Observed treated share ``n1 / n``; reads no outcomes."""

    name: str = field(default="pi_hat", init=False)
    depends_on: frozenset = field(default=frozenset(), init=False)

    def evaluate(self, Y, A, theta=None):
        A = np.atleast_2d(np.asarray(A)).astype(float)
        return A.mean(axis=1)[:, None]


@dataclass(frozen=True, eq=False)
class OLSModeration(Statistic):
    """Least-squares coefficients of per-unit pseudo-effects on covariates.

    ``pseudo`` selects the pseudo-effect: ``"ipw"`` or ``"dr"`` (the latter
    needs arm-specific regression coefficients ``beta0`` and ``beta1``).
    """

    X: np.ndarray = None
    pi: np.ndarray = None
    pseudo: str = "ipw"
    beta0: Optional[np.ndarray] = None
    beta1: Optional[np.ndarray] = None
    name: str = field(default="s_ols", init=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "pi", _validate_pi(self.pi, X.shape[0]))
        if self.pseudo not in ("ipw", "dr"):
            raise ValueError("pseudo must be 'ipw' or 'dr'")
        if self.pseudo == "dr" and (self.beta0 is None or self.beta1 is None):
            raise ValueError("dr pseudo-outcomes need beta0 and beta1")
        object.__setattr__(self, "_proj", _ols_projector(X))

    @property
    def k(self):
        return self.X.shape[1]

    def evaluate(self, Y, A, theta=None):
        Y, A = _rows(Y, A)
        Af = A.astype(float)
        if self.pseudo == "ipw":
            tau = Y * (Af / self.pi - (1 - Af) / (1 - self.pi))
        else:
            fit0 = self.X @ np.asarray(self.beta0, dtype=float)
            fit1 = self.X @ np.asarray(self.beta1, dtype=float)
            fit_a = np.where(A, fit1, fit0)
            tau = (Y - fit_a) / (Af - (1 - self.pi)) + (fit1 - fit0)
        return tau @ self._proj.T


@dataclass(frozen=True, eq=False)
class SlopeDifference(Statistic):
    """``|slope1 - slope0|`` of outcome on one covariate, fitted by OLS
    within each group."""

    x: np.ndarray = None
    name: str = field(default="slope_diff", init=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        if np.ptp(x) == 0:
            raise ConstantCovariate("covariate is constant")
        object.__setattr__(self, "x", x)

    def evaluate(self, Y, A, theta=None):
        Y, A = _rows(Y, A)
        return np.abs(_group_slope(Y, A, self.x) - _group_slope(Y, ~A, self.x))[:, None]


def _group_slope(Y, M, x):
    cnt = M.sum(1)
    with np.errstate(invalid="ignore", divide="ignore"):
        xm = np.where(M, x, 0.0).sum(1) / cnt
        ym = np.where(M, Y, 0.0).sum(1) / cnt
        dx = np.where(M, x - xm[:, None], 0.0)
        sxy = (dx * np.where(M, Y - ym[:, None], 0.0)).sum(1)
        sxx = (dx * dx).sum(1)
        return sxy / sxx


@dataclass(frozen=True, eq=False)
class Stack(Statistic):
    """Concatenation of several statistics into one vector."""

    parts: Tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError("Stack needs at least one part")

    @property
    def k(self):
        return sum(p.k for p in self.parts)

    @property
    def depends_on(self):
        return frozenset().union(*(p.depends_on for p in self.parts))

    @property
    def uses_theta(self):
        return any(p.uses_theta for p in self.parts)

    @property
    def name(self):
        return "+".join(p.name for p in self.parts)

    @property
    def labels(self):
        return tuple(lab for p in self.parts for lab in p.labels)

    def evaluate(self, Y, A, theta=None):
        return np.column_stack([p.evaluate(Y, A, theta) for p in self.parts])


# -- compatibility -------------------------------------------------------------


def check_compatible(model, stat) -> None:
    """Refuse statistics that read potential outcomes a model cannot impute."""
    if getattr(model, "direction", None) == "unidirectional_to_y1" and Y0 in stat.depends_on:
        raise IncompatibleStatistic(
            f"statistic {stat.name!r} depends on y0, which {model.name} does not impute")


STATISTICS = {
    "s0": GroupMean0,
    "s1": GroupMean1,
    "dim": DIM,
    "s02": GroupVar0,
    "s12": GroupVar1,
    "s1_s12": S12Pair,
    "s2": VarLogRatio,
    "var_ratio": VarMaxMinRatio,
    "rank_sum": RankSum,
    "moments": MomentVector,
    "ipw": IPW,
    "hajek": Hajek,
    "pi_hat": TreatedFraction,
    "s_ols": OLSModeration,
    "d_delta0": DeltaControl,
}


def make_statistic(name: str, **kwargs) -> Statistic:
    try:
        cls = STATISTICS[name]
    except KeyError:
        raise KeyError(f"unknown statistic {name!r}; valid: {sorted(STATISTICS)}") from None
    return cls(**kwargs)


# -- per-study evaluations ------------------------------------------------------


def _need_groups(study, control=True, treated=True, minimum=1):
    if control and study.n0 < minimum:
        raise EmptyGroup(f"control group needs at least {minimum} unit(s)")
    if treated and study.n1 < minimum:
        raise EmptyGroup(f"treated group needs at least {minimum} unit(s)")


def group_means(study: ObservedStudy):
    """Control and treated means ``(s0, s1)``."""
    _need_groups(study)
    y, a = study.y, study.a
    return float(y[a == 0].mean()), float(y[a == 1].mean())


def dim(study: ObservedStudy) -> float:
    """Difference in means ``s1 - s0``."""
    s0, s1 = group_means(study)
    return s1 - s0


def group_variance_stats(study: ObservedStudy):
    """``(s02, s12, s2, maxmin)`` with group-size divisors."""
    _need_groups(study, minimum=2)
    y, a = study.y, study.a
    s02 = float(np.var(y[a == 0]))
    s12 = float(np.var(y[a == 1]))
    if s02 == 0 or s12 == 0:
        raise ZeroVariance("a group has zero variance")
    return s02, s12, abs(np.log(s12 / s02)), max(s02, s12) / min(s02, s12)


def rank_sum(study: ObservedStudy) -> float:
    _need_groups(study, control=False)
    return float(RankSum().observed(study)[0])


def std_moments(study: ObservedStudy) -> np.ndarray:
    """Treated moments ``m1..m5``."""
    _need_groups(study, control=False, minimum=2)
    if np.var(study.y[study.a == 1]) == 0:
        raise ZeroVariance("treated outcomes are constant")
    return MomentVector().observed(study)


def ipw_stat(study: ObservedStudy, pi) -> float:
    return float(IPW(_validate_pi(pi, study.n)).observed(study)[0])


def hajek_stat(study: ObservedStudy, pi) -> float:
    _need_groups(study)
    return float(Hajek(_validate_pi(pi, study.n)).observed(study)[0])


def ipw_pseudo_outcomes(study: ObservedStudy, pi) -> np.ndarray:
    pi = _validate_pi(pi, study.n)
    a = study.a.astype(float)
    return study.y * (a / pi - (1 - a) / (1 - pi))


def _ols_projector(X):
    X = np.asarray(X, dtype=float)
    xtx = X.T @ X
    if np.linalg.matrix_rank(xtx) < X.shape[1]:
        raise SingularDesign("X'X is singular")
    return np.linalg.solve(xtx, X.T)


def ols_moderation_stat(study: ObservedStudy, X, tau_hat) -> np.ndarray:
    """``(X'X)^{-1} X' tau_hat``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return _ols_projector(X) @ np.asarray(tau_hat, dtype=float)


def dr_pseudo_outcomes(study: ObservedStudy, X, beta0_hat, beta1_hat, pi) -> np.ndarray:
    """Doubly robust pseudo-effects.

    ``(y - x' beta_a) / (a - (1 - pi)) + x' (beta1 - beta0)``.
    """
    pi = _validate_pi(pi, study.n)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    fit0 = X @ np.asarray(beta0_hat, dtype=float)
    fit1 = X @ np.asarray(beta1_hat, dtype=float)
    a = study.a.astype(float)
    fit_a = np.where(study.a == 1, fit1, fit0)
    return (study.y - fit_a) / (a - (1 - pi)) + (fit1 - fit0)


def d_delta0(study: ObservedStudy, theta: float) -> float:
    _need_groups(study)
    return float(DeltaControl().observed(study, theta=[[float(theta)]])[0])
