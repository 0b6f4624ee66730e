"""Simulation studies of the frequentist behaviour of randomization
posteriors and baseline estimators, plus a synthetic dataset shaped like a
menu-labelling field experiment for end-to-end analyses."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import ObservedStudy, RngStream, validate_study
from .errors import BRIError, ConfigError
from .estimators import DEFAULT_GRID, dim_estimator, prior_only
from .likelihood import (AsymptoticGaussianDIM, CoarsenedMC, ExactEnum, NeymanGaussianDIM,
                         RoundedPMF)
from .models import ConstantEffect, GaussianShift, Normal, Partial, Prior
from .posterior import grid_posterior, n_threads
from .randomization import CompleteRandomization, sample_assignments
from .statistics import DIM, GroupMean1, RankSum

BASE_METHODS = ("prior", "dim", "lib", "bri_a", "bri_c", "bri_r", "bri_rs", "bri_u")
ORACLE_METHODS = tuple(m + "*" for m in ("bri_a", "bri_c", "bri_r", "bri_rs", "bri_u"))
METHODS = BASE_METHODS + ORACLE_METHODS

# labels used in printed tables
DISPLAY = {"prior": "Prior", "dim": "DIM", "lib": "LIB", "bri_a": "BRI-A", "bri_c": "BRI-C",
           "bri_r": "BRI-R", "bri_rs": "BRI-RS", "bri_u": "BRI-U"}


def display_name(method: str) -> str:
    star = method.endswith("*")
    return DISPLAY[method.rstrip("*")] + ("*" if star else "")


@dataclass(frozen=True)
class SimConfig:
    """One simulation design.

    ``oracle=True`` adds the oracle variant of every BRI method in
    ``methods``: the observed statistic is recomputed under a fresh,
    independent assignment while the likelihood still conditions on the
    original observed outcomes.
    """

    n0: int = 5
    n1: int = 5
    n_reps: int = 2000
    methods: Tuple[str, ...] = ("prior", "dim", "lib", "bri_a", "bri_c", "bri_rs")
    prior_sd: float = 10.0
    grid: Tuple[float, float, int] = DEFAULT_GRID
    level: float = 0.95
    seed: int = 20240101
    oracle: bool = False
    mc_draws: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.n_reps < 1:
            raise ConfigError("n_reps must be at least 1")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown method label(s) {bad}; valid labels: {list(METHODS)}")
        if self.n0 < 1 or self.n1 < 1:
            raise ConfigError("n0 and n1 must be at least 1")

    @property
    def prior(self) -> Prior:
        return Prior((Normal(0.0, self.prior_sd),))

    @property
    def all_methods(self) -> Tuple[str, ...]:
        if not self.oracle:
            return self.methods
        extra = tuple(m + "*" for m in self.methods
                      if m.startswith("bri") and m + "*" not in self.methods)
        return self.methods + extra


# -- data generation ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScienceTable:
    """Both potential outcomes, the true effect and the assignment."""

    y0: np.ndarray
    y1: np.ndarray
    theta: float
    a: np.ndarray

    def study(self, a=None) -> ObservedStudy:
        a = self.a if a is None else a
        return validate_study(a, np.where(a == 1, self.y1, self.y0))


def dgp_science(n0: int, n1: int, rng, prior_sd: float = 10.0) -> ScienceTable:
    """``y0 = z + g`` with ``z ~ Normal(0, 10^2)`` and ``g ~ Gamma(shape 4,
    scale 2.5)``, ``theta ~ Normal(0, prior_sd^2)``, ``y1 = y0 + theta`` and
    complete randomization of ``n1`` treated units."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    n = n0 + n1
    y0 = gen.normal(0.0, 10.0, n) + gen.gamma(4.0, 2.5, n)
    theta = float(gen.normal(0.0, prior_sd))
    a = sample_assignments(CompleteRandomization(n, n1), gen, 1)[0].astype(np.int8)
    return ScienceTable(y0=y0, y1=y0 + theta, theta=theta, a=a)


def dgp_sample(n0: int, n1: int, rng, prior_sd: float = 10.0) -> Tuple[ObservedStudy, float]:
    """Observed study and the true effect from :func:`dgp_science`."""
    sci = dgp_science(n0, n1, rng, prior_sd)
    return sci.study(), sci.theta


# -- one replication ----------------------------------------------------------------------


@dataclass(frozen=True)
class MethodOutcome:
    point: float
    ci: Tuple[float, float]
    covered: bool
    error: float
    failure: Optional[str] = None


def _bri_engine(method: str, mech, config: SimConfig):
    if method == "bri_a":
        return ConstantEffect(), AsymptoticGaussianDIM(), DIM()
    if method == "bri_c":
        return ConstantEffect(), CoarsenedMC(DIM(), mech, draws=config.mc_draws), DIM()
    if method == "bri_r":
        return ConstantEffect(), RoundedPMF(DIM(), mech, step=1.0, draws=config.mc_draws), DIM()
    if method == "bri_rs":
        return ConstantEffect(), ExactEnum(RankSum(), mech), RankSum()
    if method == "bri_u":
        return Partial(GaussianShift(), {"sigma": 1.0}), ExactEnum(GroupMean1(), mech), GroupMean1()
    raise ConfigError(f"not a randomization-posterior method: {method!r}")


def _evaluate(method, config, study, s_obs, lik_rng):
    level = config.level
    if method == "prior":
        est = prior_only(config.prior, level, config.grid)
        return est.point, est.ci
    if method == "dim":
        est = dim_estimator(study, level)
        return est.point, est.ci
    if method == "lib":
        post = grid_posterior(config.prior, NeymanGaussianDIM(), study, ConstantEffect(), config.grid)
    else:
        mech = CompleteRandomization(study.n, study.n1)
        model, engine, _ = _bri_engine(method.rstrip("*"), mech, config)
        obs = None if s_obs is None else s_obs[method.rstrip("*")]
        post = grid_posterior(config.prior, engine, study, model, config.grid, rng=lik_rng, s_obs=obs)
    lo, hi = post.ci(level)[0]
    return float(post.mean[0]), (float(lo), float(hi))


def run_replication(config: SimConfig, rep_id: int) -> Dict[str, MethodOutcome]:
    """Draw one dataset and evaluate every method on it.

    All methods see the same dataset. Failures are recorded per method
    rather than raised.
    """
    root = RngStream(config.seed).spawn(rep_id)
    sci = dgp_science(config.n0, config.n1, root.named("data").generator(), config.prior_sd)
    study = sci.study()
    methods = config.all_methods
    oracle_obs = None
    if any(m.endswith("*") for m in methods):
        n = config.n0 + config.n1
        a_new = sample_assignments(CompleteRandomization(n, config.n1),
                                   root.named("oracle").generator(), 1)[0].astype(np.int8)
        fresh = sci.study(a_new)
        oracle_obs = {"bri_a": DIM().observed(fresh), "bri_c": DIM().observed(fresh),
                      "bri_r": DIM().observed(fresh), "bri_rs": RankSum().observed(fresh),
                      "bri_u": GroupMean1().observed(fresh)}
    out = {}
    for m in methods:
        try:
            point, ci = _evaluate(m, config, study, oracle_obs if m.endswith("*") else None,
                                  root.named("likelihood:" + m))
            out[m] = MethodOutcome(point, ci, bool(ci[0] <= sci.theta <= ci[1]), point - sci.theta)
        except BRIError as exc:
            out[m] = MethodOutcome(math.nan, (math.nan, math.nan), False, math.nan,
                                   f"{type(exc).__name__}: {exc}")
    return out


# -- aggregation ----------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodMetrics:
    bias: float
    bias_se: float
    mse: float
    mse_se: float
    coverage: float
    coverage_se: float
    ci_length: float
    ci_length_se: float
    n_ok: int
    n_failed: int


@dataclass(frozen=True)
class SimMetrics:
    """Per-method metrics with Monte Carlo standard errors, plus the raw
    per-replication outcomes for paired comparisons."""

    config: SimConfig
    methods: Dict[str, MethodMetrics]
    outcomes: Dict[str, List[MethodOutcome]] = field(repr=False, default_factory=dict)

    def __getitem__(self, method) -> MethodMetrics:
        return self.methods[method]


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    mean = math.fsum(x) / x.size
    se = math.sqrt(math.fsum((x - mean) ** 2) / (x.size - 1) / x.size) if x.size > 1 else math.nan
    return mean, se


def aggregate(config: SimConfig, outcomes: Dict[str, List[MethodOutcome]]) -> SimMetrics:
    metrics = {}
    for m, rows in outcomes.items():
        ok = [r for r in rows if r.failure is None]
        err = np.array([r.error for r in ok])
        bias, bias_se = _mean_se(err)
        mse, mse_se = _mean_se(err ** 2)
        cov = float(np.mean([r.covered for r in ok])) if ok else math.nan
        cov_se = math.sqrt(cov * (1 - cov) / len(ok)) if ok else math.nan
        length, length_se = _mean_se([r.ci[1] - r.ci[0] for r in ok])
        metrics[m] = MethodMetrics(bias, bias_se, mse, mse_se, cov, cov_se, length, length_se,
                                   len(ok), len(rows) - len(ok))
    return SimMetrics(config, metrics, outcomes)


def _run_block(args):
    config, reps = args
    return [run_replication(config, r) for r in reps]


def simulate_metrics(config: SimConfig, workers: Optional[int] = None) -> SimMetrics:
    """Run ``config.n_reps`` replications and aggregate.

    Replication ``r`` uses the substream ``spawn(r)`` of the config seed, so
    results do not depend on the number of workers (``BRI_THREADS``).
    """
    workers = n_threads() if workers is None else workers
    reps = list(range(config.n_reps))
    if workers > 1:
        blocks = [reps[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            done = list(pool.map(_run_block, [(config, b) for b in blocks]))
        by_rep = {}
        for b, res in zip(blocks, done):
            by_rep.update(zip(b, res))
        results = [by_rep[r] for r in reps]
    else:
        results = [run_replication(config, r) for r in reps]
    outcomes = {m: [res[m] for res in results] for m in config.all_methods}
    return aggregate(config, outcomes)


# -- presets and output ----------------------------------------------------------------------


def preset(name: str, reps: Optional[int] = None, seed: Optional[int] = None) -> List[SimConfig]:
    """Designs mirroring the published tables.

    ``table1``: five units per arm, six methods. ``oracle``: five units per
    arm with every BRI variant and its oracle counterpart. ``table2``: four
    sample sizes with the scalable methods.
    """
    kw = {}
    if reps is not None:
        kw["n_reps"] = int(reps)
    if seed is not None:
        kw["seed"] = int(seed)
    if name == "table1":
        return [SimConfig(**kw)]
    if name == "oracle":
        return [SimConfig(methods=("prior", "dim", "lib", "bri_u", "bri_a", "bri_r", "bri_c",
                                   "bri_rs"), oracle=True, **kw)]
    if name == "table2":
        return [SimConfig(n0=k, n1=k, methods=("prior", "dim", "lib", "bri_a"), **kw)
                for k in (10, 40, 200, 1000)]
    raise ConfigError(f"unknown preset {name!r}; valid: ['oracle', 'table1', 'table2']")


METRIC_COLUMNS = ("bias", "bias_se", "mse", "mse_se", "coverage", "coverage_se",
                  "ci_length", "ci_length_se", "n_ok", "n_failed")


def metrics_rows(metrics: SimMetrics):
    cfg = metrics.config
    for m, mm in metrics.methods.items():
        row = {"n0": cfg.n0, "n1": cfg.n1, "method": display_name(m)}
        row.update({c: getattr(mm, c) for c in METRIC_COLUMNS})
        yield row


def write_metrics_csv(path, blocks: Sequence[SimMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=("n0", "n1", "method") + METRIC_COLUMNS)
        writer.writeheader()
        for block in blocks:
            for row in metrics_rows(block):
                writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


def format_table(metrics: SimMetrics) -> str:
    """Plain-text table in the published layout, SEs in parentheses."""
    lines = [f"{'method':<9}{'bias':>20}{'MSE':>22}{'coverage':>18}{'CI length':>20}"]
    for m, mm in metrics.methods.items():
        lines.append(f"{display_name(m):<9}"
                     f"{mm.bias:>12.3f} ({mm.bias_se:.3f})"
                     f"{mm.mse:>13.3f} ({mm.mse_se:.3f})"
                     f"{mm.coverage:>10.3f} ({mm.coverage_se:.3f})"
                     f"{mm.ci_length:>12.3f} ({mm.ci_length_se:.3f})")
    return "\n".join(lines)


# -- synthetic case-study data ------------------------------------------------------------------


CASE_STUDY_CENTER = 1000.0
CASE_STUDY_SCALE = 250.0
# g(z) = int_0^z 1.1 exp(0.4 t) dt has mean 2.75 (exp(0.08) - 1) under z ~ N(0, 1);
# the intercept makes the average effect -71 on the original scale
CASE_STUDY_SLOPE = (np.log(1.1), 0.4, 0.0, 0.0)
CASE_STUDY_INTERCEPT = -71.0 / CASE_STUDY_SCALE - 2.75 * (math.exp(0.08) - 1.0)
CASE_STUDY_NOISE = 0.3


def synthetic_case_study(rng, n: int = 1743, n_covariates: int = 10,
                         return_science: bool = False):
    """Synthetic data shaped like a two-arm calorie-ordering experiment.

    Control outcomes are ``1000 + 250 z`` with ``z ~ Normal(0, 1)``; treated
    outcomes follow the monotone spline model on the same standardized
    scale with ``g'(z) = 1.1 exp(0.4 z)`` and noise sd ``0.3``. This gives
    an average effect of about ``-71``, a treated-to-control variance ratio
    near 1.6 and right-skewed treated outcomes. Half the units (rounded
    down) are treated by complete randomization. Covariates are independent
    standard normals, so there is no moderation by design.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    z = gen.standard_normal(n)
    g = 2.75 * np.expm1(0.4 * z)
    y0 = CASE_STUDY_CENTER + CASE_STUDY_SCALE * z
    y1 = CASE_STUDY_CENTER + CASE_STUDY_SCALE * (
        CASE_STUDY_INTERCEPT + g + CASE_STUDY_NOISE * gen.standard_normal(n))
    n1 = n // 2
    a = sample_assignments(CompleteRandomization(n, n1), gen, 1)[0].astype(np.int8)
    X = gen.standard_normal((n, n_covariates)) if n_covariates else None
    study = validate_study(a, np.where(a == 1, y1, y0), X)
    if return_science:
        return study, ScienceTable(y0=y0, y1=y1, theta=float(np.mean(y1 - y0)), a=a)
    return study


__all__ = [
    "SimConfig", "SimMetrics", "MethodMetrics", "MethodOutcome", "ScienceTable",
    "dgp_science", "dgp_sample", "run_replication", "simulate_metrics", "aggregate",
    "preset", "write_metrics_csv", "format_table", "synthetic_case_study", "METHODS",
]
