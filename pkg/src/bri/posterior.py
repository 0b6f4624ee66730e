"""Posterior computation on grids and by adaptive Metropolis, convergence
diagnostics, the Hodges-Lehmann solver and Bernstein-von Mises summaries."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .core import ObservedStudy, ParamVector, RngStream, as_generator, as_values
from .errors import (AllZeroDensity, NoSignChange, NonFiniteInit, NonMonotone,
                     StuckChain, UnsupportedCombination)
from .likelihood import _dim_lines, model_based_variance, randomization_moments
from .models import ConstantEffect, log_prior_rows
from .randomization import (EXACT_SUPPORT_LIMIT, CompleteRandomization, sample_assignments,
                            support_size)
from .statistics import DIM, IPW, Hajek


def n_threads() -> int:
    """Worker count from ``BRI_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("BRI_THREADS", "1")))
    except ValueError:
        return 1


# -- results ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PosteriorResult:
    """Posterior from a grid or from Markov chains.

    Grid results carry ``axes`` (one 1-d array per coordinate) and a
    ``density`` normalized so that its sum times the cell volume is one.
    Chain results carry ``draws`` of shape ``(iterations, chains, p)``.
    """

    names: tuple
    mean: np.ndarray
    cov: np.ndarray
    axes: Optional[tuple] = None
    density: Optional[np.ndarray] = None
    draws: Optional[np.ndarray] = None
    rhat: Optional[np.ndarray] = None
    ess: Optional[np.ndarray] = None
    acceptance: Optional[np.ndarray] = None

    @property
    def kind(self) -> str:
        return "grid" if self.density is not None else "mcmc"

    @property
    def p(self) -> int:
        return len(self.names)

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def marginal(self, j: int = 0):
        """Grid points and cell masses of coordinate ``j``."""
        if self.kind != "grid":
            raise ValueError("marginal masses need a grid posterior")
        cell = np.prod([_step(ax) for ax in self.axes])
        mass = self.density * cell
        if mass.ndim > 1:
            mass = mass.sum(axis=tuple(i for i in range(mass.ndim) if i != j))
        return self.axes[j], mass

    def flat_draws(self) -> np.ndarray:
        """Chain draws pooled into an ``(iterations * chains, p)`` array."""
        if self.draws is None:
            raise ValueError("no draws on a grid posterior")
        return self.draws.reshape(-1, self.p)

    def quantile(self, q: float, j: int = 0, side: str = "upper") -> float:
        """Posterior quantile of coordinate ``j``.

        On a grid, ``side="upper"`` gives the smallest grid point whose
        cumulative mass reaches ``q`` and ``side="lower"`` the largest grid
        point whose cumulative mass does not exceed ``q`` (the first point
        if none does). Equal-tailed intervals use one of each, so both
        endpoints move outward and the interval covers at least its level.
        """
        if self.kind == "grid":
            x, mass = self.marginal(j)
            cdf = np.cumsum(mass)
            if side == "upper":
                idx = min(int(np.searchsorted(cdf, q - 1e-12, side="left")), x.size - 1)
            else:
                idx = max(int(np.searchsorted(cdf, q + 1e-12, side="right")) - 1, 0)
            return float(x[idx])
        return float(np.quantile(self.flat_draws()[:, j], q))

    def median(self, j: int = 0) -> float:
        return self.quantile(0.5, j)

    def ci(self, level: float = 0.95) -> np.ndarray:
        """Equal-tailed intervals, one ``(lo, hi)`` row per coordinate."""
        if not 0 < level < 1:
            raise ValueError("level must lie in (0, 1)")
        tail = (1 - level) / 2
        return np.array([[self.quantile(tail, j, "lower"), self.quantile(1 - tail, j, "upper")]
                         for j in range(self.p)])

    def skewness(self, j: int = 0) -> float:
        if self.kind == "grid":
            x, mass = self.marginal(j)
            mu = mass @ x
            var = mass @ (x - mu) ** 2
            return float(mass @ (x - mu) ** 3 / var ** 1.5)
        return float(stats.skew(self.flat_draws()[:, j]))

    def summary(self, level: float = 0.95) -> dict:
        ci = self.ci(level)
        out = {}
        for j, name in enumerate(self.names):
            row = {"mean": float(self.mean[j]), "sd": float(self.sd[j]),
                   "median": self.median(j), "ci_level": level,
                   "ci_lo": float(ci[j, 0]), "ci_hi": float(ci[j, 1])}
            if self.rhat is not None:
                row["rhat"] = float(self.rhat[j])
                row["ess"] = float(self.ess[j])
            out[name] = row
        return out


def _step(ax):
    return float(ax[1] - ax[0]) if ax.size > 1 else 1.0


# -- grid posterior ----------------------------------------------------------------


def _grid_axes(grid, p):
    if p == 1:
        specs = [grid] if np.ndim(grid[0]) == 0 else list(grid)
    else:
        specs = list(grid)
    if len(specs) != p:
        raise ValueError(f"need one (lo, hi, n_points) triple per coordinate, got {len(specs)}")
    axes = []
    for lo, hi, k in specs:
        if not (hi > lo and int(k) >= 2):
            raise ValueError("grid needs hi > lo and at least two points")
        axes.append(np.linspace(lo, hi, int(k)))
    return tuple(axes)


def grid_posterior(prior, engine, study: ObservedStudy, model, grid=(-50.0, 50.0, 10001),
                   rng=None, s_obs=None) -> PosteriorResult:
    """Posterior on a uniform grid (one or two coordinates).

    ``grid`` is ``(lo, hi, n_points)``, or one such triple per coordinate
    for a two-parameter product grid. Engines with a closed-form grid path
    evaluate all points at once.
    """
    p = len(model.param_names)
    if p > 2:
        raise ValueError("grid posteriors support at most two coordinates")
    axes = _grid_axes(grid, p)
    mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    logp = log_prior_rows(prior, mesh)
    loglik = np.full(mesh.shape[0], -np.inf)
    ok = np.isfinite(logp)
    if ok.any():
        loglik[ok] = engine.log_likelihood_grid(model, mesh[ok], study, s_obs, rng)
    lp = logp + loglik
    if not np.any(np.isfinite(lp)):
        raise AllZeroDensity("posterior is zero at every grid point")
    w = np.exp(lp - np.max(lp[np.isfinite(lp)]))
    w = np.where(np.isfinite(lp), w, 0.0)
    cell = np.prod([_step(ax) for ax in axes])
    mass = w / w.sum()
    density = (mass / cell).reshape([ax.size for ax in axes])
    mean = mass @ mesh
    dev = mesh - mean
    cov = (dev * mass[:, None]).T @ dev
    return PosteriorResult(names=tuple(model.param_names), mean=mean, cov=np.atleast_2d(cov),
                           axes=axes, density=density)


# -- convergence diagnostics ---------------------------------------------------------


def _split(draws):
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    half = draws.shape[0] // 2
    if half < 2:
        raise ValueError("need at least four iterations per chain")
    return np.concatenate([draws[:half], draws[draws.shape[0] - half:]], axis=1)


def split_rhat(draws) -> float:
    """Split potential scale reduction for one coordinate.

    ``draws`` has shape ``(iterations, chains)``; each chain is cut in half
    and the halves are treated as separate chains.
    """
    x = _split(draws)
    n = x.shape[0]
    means = x.mean(axis=0)
    within = x.var(axis=0, ddof=1).mean()
    between = n * means.var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else np.inf
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def _autocov(x):
    n = x.size
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x - x.mean(), size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def ess(draws) -> float:
    """Effective sample size for one coordinate of ``(iterations, chains)``
    draws, with autocorrelations truncated by Geyer's initial monotone
    sequence rule."""
    x = _split(draws)
    n, m = x.shape
    acov = np.stack([_autocov(x[:, c]) for c in range(m)], axis=1)
    within = acov[0].mean() * n / (n - 1)
    means = x.mean(axis=0)
    var_plus = within * (n - 1) / n + means.var(ddof=1)
    if var_plus == 0:
        return float(n * m)
    rho = 1.0 - (within - acov.mean(axis=1)) / var_plus
    rho[0] = 1.0
    # pair sums, truncated at the first negative pair and made monotone
    pairs = rho[:-1:2] + rho[1::2]
    neg = np.flatnonzero(pairs < 0)
    pairs = pairs[:neg[0]] if neg.size else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    return float(n * m / max(tau, 1.0 / np.log10(n * m)))


# -- adaptive Metropolis ---------------------------------------------------------------


def _log_posterior(prior, engine, study, model, s_obs, lik_rng):
    def f(theta):
        lp = float(log_prior_rows(prior, theta[None, :])[0])
        if not np.isfinite(lp):
            return -np.inf
        ll = engine.log_likelihood(model, theta, study, s_obs, lik_rng)
        return lp + ll if np.isfinite(ll) else -np.inf
    return f


def _run_chain(logpost, init, warmup, iters, gen, scale0):
    p = init.size
    target = 0.44 if p == 1 else 0.234
    chol = np.diag(scale0)
    log_scale = np.log(2.38 / np.sqrt(p))
    x = init.copy()
    lp = logpost(x)
    out = np.empty((iters, p))
    accepted = 0
    half = warmup // 2
    history = np.empty((warmup, p))
    for t in range(warmup + iters):
        prop = x + np.exp(log_scale) * (chol @ gen.standard_normal(p))
        lp_prop = logpost(prop)
        acc = lp_prop > -np.inf and np.log(gen.random()) < lp_prop - lp
        if acc:
            x, lp = prop, lp_prop
        if t < warmup:
            history[t] = x
            log_scale += (float(acc) - target) / (t + 1) ** 0.6
            # proposal shape from the draws of the second half of warmup
            if p > 1 and t >= half + 2 * p and (t - half) % 50 == 0:
                cov = np.cov(history[half:t + 1], rowvar=False)
                try:
                    chol = np.linalg.cholesky(cov + 1e-10 * np.eye(p) * np.trace(cov) / p)
                except np.linalg.LinAlgError:
                    pass
        else:
            out[t - warmup] = x
            accepted += int(acc)
    return out, accepted / max(iters, 1)


def mh_sample(prior, engine, study: ObservedStudy, model, init, warmup: int = 1000,
              iters: int = 1000, chains: int = 4, rng=None, s_obs=None,
              scale: Optional[Sequence[float]] = None) -> PosteriorResult:
    """Adaptive random-walk Metropolis.

    The proposal scale is tuned during warmup toward acceptance 0.44 for one
    coordinate or 0.234 jointly for several, and for several coordinates the
    proposal covariance is re-estimated from the second half of warmup.
    Adaptation stops when warmup ends.

    ``init`` is one parameter vector or one row per chain. Chain ``c`` uses
    ``rng.spawn(c)`` for its proposals; likelihood engines that need
    randomness get ``rng.named("likelihood")``, so results are reproducible
    for a fixed seed regardless of how chains are scheduled.
    """
    if not isinstance(rng, RngStream):
        raise TypeError("mh_sample needs an RngStream for reproducible chains")
    if warmup < 4 or iters < 4 or chains < 1:
        raise ValueError("need warmup >= 4, iters >= 4 and chains >= 1")
    names = tuple(model.param_names)
    p = len(names)
    starts = np.atleast_2d(np.asarray(as_values(init) if isinstance(init, ParamVector) else init,
                                      dtype=float))
    if starts.shape[1] != p:
        raise ValueError(f"init has {starts.shape[1]} coordinates, model has {p}")
    if starts.shape[0] == 1:
        starts = np.repeat(starts, chains, axis=0)
    if starts.shape[0] != chains:
        raise ValueError("init needs one row or one row per chain")
    logpost = _log_posterior(prior, engine, study, model, s_obs, rng.named("likelihood"))
    for row in starts:
        if not np.isfinite(logpost(row)):
            raise NonFiniteInit(f"log posterior is not finite at {row.tolist()}")
    scale0 = np.asarray(scale, dtype=float) if scale is not None else \
        np.maximum(0.1 * np.abs(starts[0]), 0.1)

    def job(c):
        return _run_chain(logpost, starts[c], warmup, iters, rng.spawn(c).generator(), scale0)

    workers = min(n_threads(), chains)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, range(chains)))
    else:
        results = [job(c) for c in range(chains)]
    draws = np.stack([r[0] for r in results], axis=1)
    acceptance = np.array([r[1] for r in results])
    if np.any(acceptance < 0.01):
        raise StuckChain(f"post-warmup acceptance {acceptance.min():.4f} is below 0.01")
    flat = draws.reshape(-1, p)
    rhat = np.array([split_rhat(draws[:, :, j]) for j in range(p)])
    n_eff = np.array([ess(draws[:, :, j]) for j in range(p)])
    return PosteriorResult(names=names, mean=flat.mean(axis=0),
                           cov=np.atleast_2d(np.cov(flat, rowvar=False)),
                           draws=draws, rhat=rhat, ess=n_eff, acceptance=acceptance)


# -- Hodges-Lehmann estimator -------------------------------------------------------------


def hodges_lehmann(model, stat, study: ObservedStudy, mech, bracket=(-50.0, 50.0),
                   mode: str = "auto", m: int = 10_000, rng=None, tol: float = 1e-10,
                   n_check: int = 5) -> float:
    """Solve ``r_n(theta) = s_obs`` for a scalar parameter and statistic.

    ``r_n`` is the randomization mean, computed by enumeration
    (``mode="exact"``) or from ``m`` Monte Carlo draws that reuse one
    stream for every ``theta`` (``mode="mc"``), which keeps the estimate a
    smooth function of ``theta`` for the constant model. ``"auto"``
    enumerates when possible.

    The root is found with Brent's bracketing method to ``tol``. The
    bracket must show a sign change, and ``r_n`` is checked for
    monotonicity at ``n_check`` evenly spaced points.
    """
    if len(model.param_names) != 1 or stat.k != 1:
        raise UnsupportedCombination("Hodges-Lehmann needs a scalar parameter and statistic")
    lo, hi = map(float, bracket)
    if not hi > lo:
        raise ValueError("bracket needs hi > lo")
    if mode == "auto":
        mode = "exact" if (not model.stochastic and support_size(mech) <= EXACT_SUPPORT_LIMIT) else "mc"
    if mode == "mc" and rng is None:
        raise ValueError("Monte Carlo moments need an rng")
    stream = rng
    if mode == "mc" and not isinstance(rng, RngStream):
        stream = RngStream(int(as_generator(rng).integers(2 ** 63)))

    if mode == "mc" and isinstance(model, ConstantEffect) and type(stat) is DIM \
            and not getattr(mech, "needs_y1", False):
        # the statistic is linear in theta per assignment, so draw once
        d_y, slope = _dim_lines(study, sample_assignments(mech, stream.generator(), m))
        ok = np.isfinite(d_y) & np.isfinite(slope)
        mean_d, mean_slope = float(d_y[ok].mean()), float(slope[ok].mean())

        def r_n(theta):
            return mean_d + theta * mean_slope
    else:
        def r_n(theta):
            return float(randomization_moments(model, [theta], study, stat, mech, mode=mode,
                                               m=m, rng=stream).r_n[0])

    s_obs = float(stat.observed(study)[0])
    xs = np.linspace(lo, hi, max(n_check, 2))
    rs = np.array([r_n(x) for x in xs])
    diffs = np.diff(rs)
    if not (np.all(diffs >= 0) or np.all(diffs <= 0)):
        raise NonMonotone("r_n is not monotone on the bracket")
    f_lo, f_hi = rs[0] - s_obs, rs[-1] - s_obs
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    if np.sign(f_lo) == np.sign(f_hi):
        raise NoSignChange("r_n(theta) - s_obs has the same sign at both ends of the bracket")
    return float(optimize.brentq(lambda t: r_n(t) - s_obs, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps))


# -- Bernstein-von Mises summaries ------------------------------------------------------------


@dataclass(frozen=True)
class AsymptoticSummary:
    """Plug-in Gaussian approximation ``N(mu_n, Sigma / n)`` to the posterior.

    ``theta_star`` is the plug-in limit point, ``r_prime`` the Jacobian of
    the randomization mean, ``V_star`` the scaled randomization variance at
    ``theta_star``, ``mu_n`` the centering and ``Sigma`` the sandwich
    ``r'^-1 V r'^-T``.
    """

    theta_star: np.ndarray
    r_prime: np.ndarray
    V_star: np.ndarray
    mu_n: np.ndarray
    Sigma: np.ndarray
    n: int

    def ci(self, level: float = 0.95) -> np.ndarray:
        z = stats.norm.ppf(0.5 + level / 2)
        half = z * np.sqrt(np.diag(self.Sigma) / self.n)
        return np.stack([self.mu_n - half, self.mu_n + half], axis=1)


def ipw_scaled_variance(theta, study: ObservedStudy, pi) -> np.ndarray:
    """``v_n(theta)`` for the inverse-probability-weighted statistic."""
    th = np.atleast_1d(np.asarray(theta, dtype=float))[:, None]
    y, a = study.y[None, :], study.a.astype(float)[None, :]
    pi = np.broadcast_to(np.asarray(pi, dtype=float), (study.n,))[None, :]
    return np.mean((y + (1 - pi - a) * th) ** 2 / (pi * (1 - pi)), axis=1)


def hajek_scaled_variance(theta, study: ObservedStudy, pi) -> np.ndarray:
    """Leading term of ``v_n(theta)`` for the Hajek statistic."""
    th = np.atleast_1d(np.asarray(theta, dtype=float))[:, None]
    y, a = study.y[None, :], study.a.astype(float)[None, :]
    pi = np.broadcast_to(np.asarray(pi, dtype=float), (study.n,))[None, :]
    ybar = study.y.mean()
    u1 = ybar + study.n0 * th / study.n
    u0 = ybar - study.n1 * th / study.n
    num = (1 - pi) * (y + (1 - a) * th - u1) + pi * (y - a * th - u0)
    return np.mean(num ** 2 / (pi * (1 - pi)), axis=1)


def bvm_summary(study: ObservedStudy, model, stat, mech=None) -> AsymptoticSummary:
    """Asymptotic summary for the constant model with the difference in
    means, the IPW statistic or the Hajek statistic.

    For these, ``r(theta) = theta`` so ``r' = 1`` and ``mu_n`` is the
    observed statistic, which is also the Hodges-Lehmann estimate. The
    variance is the scaled randomization variance ``v_n`` evaluated at that
    estimate, with empirical moments in place of population ones.
    """
    if not isinstance(model, ConstantEffect):
        raise UnsupportedCombination("asymptotic summaries are available for the constant model only")
    s_obs = float(stat.observed(study)[0])
    if type(stat) is DIM:
        if mech is not None and not isinstance(mech, CompleteRandomization):
            raise UnsupportedCombination("difference-in-means summary assumes complete randomization")
        v = float(model_based_variance(s_obs, study))
    elif isinstance(stat, IPW):
        v = float(ipw_scaled_variance(s_obs, study, stat.pi)[0])
    elif isinstance(stat, Hajek):
        v = float(hajek_scaled_variance(s_obs, study, stat.pi)[0])
    else:
        raise UnsupportedCombination(f"no asymptotic formulas for statistic {stat.name!r}")
    one = np.eye(1)
    return AsymptoticSummary(theta_star=np.array([s_obs]), r_prime=one, V_star=np.array([[v]]),
                             mu_n=np.array([s_obs]), Sigma=np.array([[v]]), n=study.n)


def bvm_tv_distance(posterior: PosteriorResult, asym: AsymptoticSummary, n: Optional[int] = None) -> float:
    """Total-variation integral ``int |p(theta) - N(theta; mu_n, Sigma/n)|``
    over the grid of a one-dimensional grid posterior (Riemann sum).

    Gaussian mass outside the grid counts toward the distance. The result
    lies in ``[0, 2]``.
    """
    if posterior.kind != "grid" or posterior.p != 1:
        raise ValueError("TV distance needs a one-dimensional grid posterior")
    n = asym.n if n is None else n
    x = posterior.axes[0]
    dx = _step(x)
    sd = float(np.sqrt(asym.Sigma[0, 0] / n))
    gauss = stats.norm.pdf(x, float(asym.mu_n[0]), sd)
    inside = float(np.clip(gauss.sum() * dx, 0.0, 1.0))
    tv = np.abs(posterior.density - gauss).sum() * dx + (1.0 - inside)
    return float(np.clip(tv, 0.0, 2.0))
