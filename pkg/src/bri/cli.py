"""Command-line interface: ``bri analyze``, ``bri frt`` and ``bri simulate``.

Analyses are described by a TOML file; see the README for a worked
example. Outputs go to the configured directory (overridable with
``BRI_OUTPUT_DIR``) and are only written once every stage has succeeded.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from scipy.stats import norm

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from . import harness
from .checks import COMBINE_RULES, moderation_check, moment_checks, posterior_predictive_p
from .core import ObservedStudy, RngStream, validate_study
from .errors import (BRIError, ConfigError, EmptyFile, MissingColumn, NumericalError, ParseError,
                     UnsupportedCombination, ValidationError)
from .likelihood import (AsymptoticGaussianDIM, CoarsenedMC, ExactEnum, NeymanGaussianDIM,
                         RoundedPMF, SyntheticLikelihood)
from .models import (MODEL_TYPES, ConstantEffect, Gamma, HalfNormal, MonotoneSpline, Normal,
                     Partial, Prior, Uniform, default_prior, model_conditional_moments)
from .posterior import bvm_summary, bvm_tv_distance, grid_posterior, mh_sample
from .randomization import (CompleteRandomization, ConfoundedLogit, SimpleBernoulli, frt_p_value,
                            simulate_statistic)
from .statistics import STATISTICS, IPW, Hajek, OLSModeration, Stack, check_compatible

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

# name of the analysis stage in progress, for error messages
_stage = ["setup"]


def _enter(stage):
    _stage[0] = stage


# -- CSV ingestion ----------------------------------------------------------------------


def ingest_csv(path, mapping: Dict) -> ObservedStudy:
    """Read a headed CSV into a validated study.

    ``mapping`` names the columns: ``a``, ``y`` and optionally a list
    ``covariates``. Data rows are numbered from 1 in error messages.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read data file {path}: {exc}") from None
    reader = csv.DictReader(io.StringIO(text))
    if not reader.fieldnames:
        raise EmptyFile(f"{path} has no header")
    cols = [mapping["a"], mapping["y"], *mapping.get("covariates", [])]
    missing = [c for c in cols if c not in reader.fieldnames]
    if missing:
        raise MissingColumn(f"column(s) {missing} not in {path}; found {reader.fieldnames}")
    a, y, X = [], [], []
    for row_no, row in enumerate(reader, start=1):
        try:
            vals = [float(row[c]) for c in cols]
        except (TypeError, ValueError):
            raise ParseError(f"row {row_no}: missing or non-numeric value", row=row_no) from None
        if vals[0] not in (0.0, 1.0):
            raise ParseError(f"row {row_no}: assignment must be 0 or 1, got {row[cols[0]]!r}",
                             row=row_no)
        if not all(math.isfinite(v) for v in vals):
            raise ParseError(f"row {row_no}: non-finite value", row=row_no)
        a.append(int(vals[0]))
        y.append(vals[1])
        X.append(vals[2:])
    if not a:
        raise EmptyFile(f"{path} has no data rows")
    Xarr = np.array(X) if mapping.get("covariates") else None
    return validate_study(np.array(a), np.array(y), Xarr)


# -- configuration --------------------------------------------------------------------


DEFAULTS = {
    "output_dir": "bri_output",
    "data": {"covariates": []},
    "mechanism": {"type": "complete"},
    "model": {"type": "constant", "fixed": {}},
    "statistic": {"names": ["dim"]},
    "engine": {"type": "asymptotic"},
    "sampler": {"type": "grid", "grid": [-50.0, 50.0, 10001], "warmup": 1000, "iters": 1000,
                "chains": 4},
    "frt": {"enabled": True, "theta0": [0.0], "statistic": "dim", "draws": 100000,
            "sided": "two_sided_abs"},
    "checks": {"discrepancies": [], "moments": False, "moderation": False,
               "posterior_draws": 2000, "rand_draws_per_theta": 1, "combine": "pooled",
               "moderation_draws": 10000},
    "report": {"level": 0.95},
}

ENGINES = ("exact", "coarsened", "rounded", "asymptotic", "neyman", "synthetic")


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class AnalysisConfig:
    """Normalized analysis configuration (defaults filled in)."""

    tree: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "AnalysisConfig":
        if "seed" not in raw:
            raise ConfigError("config must set 'seed'")
        if "data" not in raw or "path" not in raw["data"]:
            raise ConfigError("config must set data.path")
        for key in ("a", "y"):
            if key not in raw["data"]:
                raise ConfigError(f"config must set data.{key} (column name)")
        unknown = set(raw) - set(DEFAULTS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config section(s) {sorted(unknown)}")
        tree = _merge(DEFAULTS, raw)
        try:
            tree["seed"] = int(tree["seed"])
        except (TypeError, ValueError):
            raise ConfigError("seed must be an integer") from None
        if tree["engine"]["type"] not in ENGINES:
            raise ConfigError(f"unknown engine {tree['engine']['type']!r}; valid: {list(ENGINES)}")
        if tree["model"]["type"] not in MODEL_TYPES:
            raise ConfigError(f"unknown model {tree['model']['type']!r}; valid: {sorted(MODEL_TYPES)}")
        if tree["sampler"]["type"] not in ("grid", "mh"):
            raise ConfigError("sampler.type must be 'grid' or 'mh'")
        checks = tree["checks"]
        if checks["combine"] not in COMBINE_RULES:
            raise ConfigError(f"checks.combine must be one of {list(COMBINE_RULES)}")
        if checks["combine"] == "averaged" and int(checks["rand_draws_per_theta"]) < 2:
            raise ConfigError("checks.combine = 'averaged' needs checks.rand_draws_per_theta >= 2")
        return cls(tree)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.tree)

    def dumps(self) -> str:
        return tomli_w.dumps(self.tree)

    def __getitem__(self, key):
        return self.tree[key]


def load_config(path) -> AnalysisConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from None
    cfg = AnalysisConfig.from_dict(raw)
    data = cfg.tree["data"]
    # relative data paths are resolved against the config file
    if not Path(data["path"]).is_absolute():
        data["path"] = str((Path(path).parent / data["path"]).resolve())
    return cfg


def _prior_component(spec: dict):
    kind = spec.get("dist")
    try:
        if kind == "normal":
            return Normal(float(spec.get("mean", 0.0)), float(spec["sd"]))
        if kind == "half_normal":
            return HalfNormal(float(spec["sd"]))
        if kind == "uniform":
            return Uniform(float(spec["lo"]), float(spec["hi"]))
        if kind == "gamma":
            par = spec.get("parameterization")
            if par == "shape_rate":
                return Gamma(float(spec["shape"]), rate=float(spec["rate"]))
            if par == "shape_scale":
                return Gamma(float(spec["shape"]), scale=float(spec["scale"]))
            raise ConfigError("gamma priors need parameterization = 'shape_rate' or 'shape_scale'")
    except KeyError as exc:
        raise ConfigError(f"prior {spec} is missing {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"invalid prior {spec}: {exc}") from None
    raise ConfigError(f"unknown prior distribution {kind!r}")


def _build_model(cfg, study):
    spec = cfg["model"]
    cls = MODEL_TYPES[spec["type"]]
    base = cls.standardized_for(study) if cls is MonotoneSpline else cls()
    model = Partial(base, spec["fixed"]) if spec["fixed"] else base
    priors = spec.get("prior")
    if priors is None:
        full = default_prior(base)
        prior = Prior(tuple(c for name, c in zip(base.param_names, full.components)
                            if name in model.param_names))
    else:
        by_name = {p["name"]: p for p in priors}
        missing = [p for p in model.param_names if p not in by_name]
        if missing:
            raise ConfigError(f"no prior given for parameter(s) {missing}")
        prior = Prior(tuple(_prior_component(by_name[p]) for p in model.param_names))
    return model, prior


def _build_mechanism(cfg, study):
    spec = cfg["mechanism"]
    kind = spec["type"]
    if kind == "complete":
        return CompleteRandomization(study.n, study.n1)
    if kind == "bernoulli":
        return SimpleBernoulli(np.full(study.n, float(spec.get("pi", study.pi))))
    if kind == "confounded_logit":
        return ConfoundedLogit(float(spec["alpha"]), float(spec["beta"]), study.n)
    raise ConfigError(f"unknown mechanism {kind!r}; valid: ['bernoulli', 'complete', 'confounded_logit']")


def _one_statistic(name, study, pi):
    if name not in STATISTICS:
        raise ConfigError(f"unknown statistic {name!r}; valid: {sorted(STATISTICS)}")
    cls = STATISTICS[name]
    if cls in (IPW, Hajek):
        return cls(pi=np.full(study.n, pi))
    if cls is OLSModeration:
        if study.X is None:
            raise ConfigError("s_ols needs covariates")
        return cls(X=study.X, pi=pi)
    return cls()


def _build_statistic(names, study, mech):
    names = [names] if isinstance(names, str) else list(names)
    pi = float(mech.pi[0]) if isinstance(mech, SimpleBernoulli) else study.pi
    parts = [_one_statistic(n, study, pi) for n in names]
    return parts[0] if len(parts) == 1 else Stack(tuple(parts))


def _build_engine(cfg, stat, mech):
    spec = cfg["engine"]
    kind = spec["type"]
    if kind == "exact":
        return ExactEnum(stat, mech)
    if kind == "coarsened":
        return CoarsenedMC(stat, mech, eps=spec.get("eps"), draws=spec.get("draws"))
    if kind == "rounded":
        return RoundedPMF(stat, mech, step=float(spec.get("step", 1.0)), draws=spec.get("draws"))
    if kind == "asymptotic":
        return AsymptoticGaussianDIM()
    if kind == "neyman":
        return NeymanGaussianDIM()
    return SyntheticLikelihood(stat, mech, m=int(spec.get("m", 1000)))


@dataclass
class Plan:
    study: ObservedStudy
    model: object
    prior: Prior
    mech: object
    stat: object
    engine: object
    discrepancies: list


def validate_plan(cfg: AnalysisConfig) -> Plan:
    """Build every object the analysis needs and check compatibility,
    without running any computation."""
    study = ingest_csv(cfg["data"]["path"], cfg["data"])
    model, prior = _build_model(cfg, study)
    mech = _build_mechanism(cfg, study)
    stat = _build_statistic(cfg["statistic"]["names"], study, mech)
    check_compatible(model, stat)
    engine = _build_engine(cfg, stat, mech)
    if cfg["engine"]["type"] in ("asymptotic", "neyman"):
        if not isinstance(model, ConstantEffect) or getattr(stat, "name", "") != "dim":
            raise UnsupportedCombination(
                f"the {cfg['engine']['type']} engine needs the constant model with the dim statistic")
    if cfg["sampler"]["type"] == "grid" and len(model.param_names) > 2:
        raise ConfigError("grid sampler supports at most two parameters; use sampler.type = 'mh'")
    discrepancies = []
    for name in cfg["checks"]["discrepancies"]:
        d = _build_statistic(name, study, mech)
        check_compatible(model, d)
        discrepancies.append(d)
    if cfg["checks"]["moderation"] and study.X is None:
        raise ConfigError("moderation checks need data.covariates")
    if cfg["frt"]["enabled"]:
        check_compatible(ConstantEffect(), _build_statistic(cfg["frt"]["statistic"], study, mech))
    return Plan(study, model, prior, mech, stat, engine, discrepancies)


# -- analysis ------------------------------------------------------------------------------


class Outputs:
    """In-memory output files, written together at the end."""

    def __init__(self):
        self.files: Dict[str, str] = {}

    def csv(self, name, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        self.files[name] = buf.getvalue()

    def json(self, name, obj):
        self.files[name] = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"

    def write(self, out_dir: Path) -> List[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, text in sorted(self.files.items()):
            p = out_dir / name
            p.write_text(text)
            paths.append(p)
        return paths


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not serializable: {type(v)}")


def _histogram(values, observed, bins=60):
    vals = np.asarray(values, dtype=float)
    vals = vals[np.isfinite(vals)]
    lo = min(vals.min(), observed)
    hi = max(vals.max(), observed)
    if hi == lo:
        hi = lo + 1.0
    counts, edges = np.histogram(vals, bins=bins, range=(lo, hi))
    return [(edges[i], edges[i + 1], int(counts[i]), observed) for i in range(bins)]


def _frt(cfg, plan, root, out: Outputs):
    spec = cfg["frt"]
    stat = _build_statistic(spec["statistic"], plan.study, plan.mech)
    theta0 = [float(t) for t in np.atleast_1d(spec["theta0"])]
    draws = int(spec["draws"])
    gen = root.named("frt").generator()
    res = frt_p_value(plan.study, ConstantEffect(), theta0, stat, plan.mech, draws, gen,
                      sided=spec["sided"])
    ref = simulate_statistic(ConstantEffect(), theta0, plan.study, stat, plan.mech,
                             min(draws, 20000), root.named("frt_plot").generator())[:, 0]
    observed = float(stat.observed(plan.study)[0])
    out.csv("frt_histogram.csv", ["bin_lo", "bin_hi", "count", "observed"], _histogram(ref, observed))
    return {"statistic": stat.name, "theta0": theta0, "observed": observed, "p_value": res.value,
            "n_draws": res.n_draws, "n_extreme": res.n_extreme, "exact": res.exact,
            "sided": spec["sided"]}


def _posterior_draws(post, k, gen):
    if post.kind == "mcmc":
        flat = post.flat_draws()
        if flat.shape[0] > k:
            flat = flat[np.linspace(0, flat.shape[0] - 1, k).round().astype(int)]
        return flat
    mesh = np.stack([m.ravel() for m in np.meshgrid(*post.axes, indexing="ij")], axis=1)
    mass = post.density.ravel()
    mass = mass / mass.sum()
    return mesh[gen.choice(mass.size, size=k, p=mass)]


def run_analysis(cfg: AnalysisConfig, out_dir: Optional[Path] = None) -> List[Path]:
    """Fit, check and report; returns the written paths."""
    _enter("validation")
    plan = validate_plan(cfg)
    root = RngStream(cfg["seed"])
    out = Outputs()
    level = float(cfg["report"]["level"])
    summary = {"study": {"n": plan.study.n, "n0": plan.study.n0, "n1": plan.study.n1},
               "model": plan.model.name, "parameters": list(plan.model.param_names),
               "statistic": plan.stat.name, "engine": cfg["engine"]["type"], "seed": cfg["seed"]}
    if cfg["frt"]["enabled"]:
        _enter("randomization test")
        summary["frt"] = _frt(cfg, plan, root, out)
    _enter("posterior")

    sampler = cfg["sampler"]
    lik_rng = root.named("likelihood")
    if sampler["type"] == "grid":
        g = sampler["grid"]
        grid = tuple(g) if np.ndim(g[0]) == 0 else [tuple(x) for x in g]
        post = grid_posterior(plan.prior, plan.engine, plan.study, plan.model, grid, rng=lik_rng)
    else:
        init = sampler.get("init")
        if init is None:
            raise ConfigError("sampler.init is required for the mh sampler")
        post = mh_sample(plan.prior, plan.engine, plan.study, plan.model, np.asarray(init, float),
                         int(sampler["warmup"]), int(sampler["iters"]), int(sampler["chains"]),
                         root.named("sampler"), scale=sampler.get("scale"))
    summary["posterior"] = post.summary(level)
    if post.kind == "mcmc":
        d = post.draws
        rows = ((c, i, *d[i, c]) for c in range(d.shape[1]) for i in range(d.shape[0]))
        out.csv("draws.csv", ["chain", "iteration", *post.names], rows)
        summary["acceptance"] = post.acceptance

    if isinstance(plan.model, ConstantEffect) and post.kind == "grid":
        try:
            asym = bvm_summary(plan.study, plan.model, plan.stat, plan.mech)
        except UnsupportedCombination:
            asym = None
        x = post.axes[0]
        if asym is not None:
            gauss = norm.pdf(x, asym.mu_n[0], math.sqrt(asym.Sigma[0, 0] / asym.n))
            summary["bvm"] = {"mu_n": asym.mu_n, "Sigma": asym.Sigma,
                              "ci": asym.ci(level)[0], "tv_distance": bvm_tv_distance(post, asym)}
        else:
            gauss = np.full_like(x, np.nan)
        keep = post.density > 1e-12 * post.density.max()
        out.csv("posterior_density.csv", ["theta", "posterior", "bvm_gaussian"],
                zip(x[keep], post.density[keep], gauss[keep]))
    elif post.kind == "grid":
        axes = np.meshgrid(*post.axes, indexing="ij")
        keep = post.density.ravel() > 1e-12 * post.density.max()
        cols = [ax.ravel()[keep] for ax in axes]
        out.csv("posterior_density.csv", [*post.names, "posterior"],
                zip(*cols, post.density.ravel()[keep]))

    _enter("model checks")
    checks = []
    spec = cfg["checks"]
    if plan.discrepancies or spec["moments"]:
        draws = _posterior_draws(post, int(spec["posterior_draws"]), root.named("check_draws").generator())
        results = []
        for j, d in enumerate(plan.discrepancies):
            results.append(posterior_predictive_p(draws, plan.model, d, plan.study, plan.mech,
                                                  root.named(f"check:{d.name}").generator(),
                                                  int(spec["rand_draws_per_theta"]), spec["combine"]))
        if spec["moments"]:
            results += moment_checks(draws, plan.model, plan.study, plan.mech,
                                     root.named("check:moments").generator(),
                                     int(spec["rand_draws_per_theta"]), spec["combine"])
        for r in results:
            checks.append({"name": r.name, "p_value": r.p_value, "u": r.u, "combine": r.combine,
                           "n_posterior_draws": r.n_posterior_draws, "n_rand_draws": r.n_rand_draws})
            obs = float(np.median(r.observed))
            out.csv(f"check_{r.name}.csv", ["bin_lo", "bin_hi", "count", "observed"],
                    _histogram(r.reference, obs))
    if spec["moderation"]:
        names = cfg["data"]["covariates"]
        mod = moderation_check(plan.study, plan.study.X, plan.mech, root.named("moderation"),
                               int(spec["moderation_draws"]), names)
        summary["moderation"] = {"p_values": dict(zip(mod.names, mod.p_values.tolist())),
                                 "min_p": mod.min_p}
    summary["checks"] = checks

    if not isinstance(plan.model, ConstantEffect):
        _enter("conditional effects")
        draws = _posterior_draws(post, min(int(spec["posterior_draws"]), 1000),
                                 root.named("curve_draws").generator())
        y0 = plan.study.y[plan.study.a == 0]
        grid = np.linspace(np.quantile(y0, 0.01), np.quantile(y0, 0.99), 101)
        effects = np.array([model_conditional_moments(plan.model, t, grid)[0] - grid for t in draws])
        lo, hi = np.quantile(effects, [(1 - level) / 2, (1 + level) / 2], axis=0)
        out.csv("conditional_effect.csv", ["y0", "mean_effect", "lo", "hi"],
                zip(grid, effects.mean(axis=0), lo, hi))

    _enter("writing outputs")
    summary["timestamp"] = datetime.now(timezone.utc).isoformat()
    out.json("summary.json", summary)
    return out.write(_output_dir(cfg, out_dir))


def run_frt_only(cfg: AnalysisConfig, out_dir: Optional[Path] = None) -> List[Path]:
    _enter("validation")
    plan = validate_plan(cfg)
    _enter("randomization test")
    out = Outputs()
    result = _frt(cfg, plan, RngStream(cfg["seed"]), out)
    result["timestamp"] = datetime.now(timezone.utc).isoformat()
    out.json("frt.json", result)
    return out.write(_output_dir(cfg, out_dir))


def _output_dir(cfg, override):
    if override is not None:
        return Path(override)
    env = os.environ.get("BRI_OUTPUT_DIR")
    return Path(env) if env else Path(cfg["output_dir"])


def run_simulation(preset: str, reps=None, seed=None, out_dir=None) -> List[Path]:
    configs = harness.preset(preset, reps, seed)
    blocks = [harness.simulate_metrics(c) for c in configs]
    d = Path(out_dir or os.environ.get("BRI_OUTPUT_DIR") or "bri_output")
    d.mkdir(parents=True, exist_ok=True)
    path = d / f"{preset}_metrics.csv"
    harness.write_metrics_csv(path, blocks)
    for b in blocks:
        print(f"n0={b.config.n0} n1={b.config.n1} reps={b.config.n_reps}")
        print(harness.format_table(b))
    return [path]


# -- entry point ----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bri", description="Bayesian randomization inference")
    sub = p.add_subparsers(dest="command", required=True)
    a = sub.add_parser("analyze", help="fit a model, run checks and write a report")
    a.add_argument("--config", required=True)
    a.add_argument("--out", default=None, help="output directory (overrides config)")
    f = sub.add_parser("frt", help="randomization test of a sharp null only")
    f.add_argument("--config", required=True)
    f.add_argument("--out", default=None)
    s = sub.add_parser("simulate", help="run a simulation-study preset")
    s.add_argument("--preset", required=True, choices=("table1", "table2", "oracle"))
    s.add_argument("--reps", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _enter("setup")
    try:
        if args.command == "simulate":
            paths = run_simulation(args.preset, args.reps, args.seed, args.out)
        else:
            cfg = load_config(args.config)
            runner = run_analysis if args.command == "analyze" else run_frt_only
            paths = runner(cfg, Path(args.out) if args.out else None)
    except ValidationError as exc:
        print(f"bri: validation error during {_stage[0]}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, BRIError) as exc:
        print(f"bri: numerical error during {_stage[0]}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
