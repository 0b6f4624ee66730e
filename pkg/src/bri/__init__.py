"""Bayesian randomization inference.

Posterior inference for treatment effects in randomized experiments, where
the likelihood is the randomization distribution of a chosen statistic
with the observed outcomes held fixed.
"""

from .core import (CoarseningSchedule, ObservedStudy, ParamVector, RngStream,
                   coarsening_schedule, validate_study)
from .errors import BRIError, NumericalError, ValidationError
from .models import (ConstantEffect, Gamma, GaussianRegression, GaussianShift, HalfNormal,
                     MonotoneSpline, Normal, Partial, Prior, Uniform, impute)
from .randomization import (CompleteRandomization, ConfoundedLogit, SimpleBernoulli,
                            frt_p_value)
from .likelihood import (AsymptoticGaussianDIM, CoarsenedMC, ExactEnum, NeymanGaussianDIM,
                         RoundedPMF, SyntheticLikelihood, randomization_moments)
from .posterior import (bvm_summary, bvm_tv_distance, ess, grid_posterior, hodges_lehmann,
                        mh_sample, split_rhat)
from .checks import moderation_check, moment_checks, posterior_predictive_p
from .estimators import dim_estimator, lib_posterior, prior_only

__all__ = [
    "AsymptoticGaussianDIM", "BRIError", "CoarseningSchedule", "CoarsenedMC",
    "CompleteRandomization", "ConfoundedLogit", "ConstantEffect", "ExactEnum", "Gamma",
    "GaussianRegression", "GaussianShift", "HalfNormal", "MonotoneSpline", "NeymanGaussianDIM",
    "Normal", "NumericalError", "ObservedStudy", "ParamVector", "Partial", "Prior", "RngStream",
    "RoundedPMF", "SimpleBernoulli", "SyntheticLikelihood", "Uniform", "ValidationError",
    "bvm_summary", "bvm_tv_distance", "coarsening_schedule", "dim_estimator", "ess",
    "frt_p_value", "grid_posterior", "hodges_lehmann", "impute", "lib_posterior", "mh_sample",
    "moderation_check", "moment_checks", "posterior_predictive_p", "prior_only",
    "randomization_moments", "split_rhat", "validate_study",
]

__version__ = "0.1.0"
