"""Bootstrap uncertainty for propensity-score pair-matching ATT estimates.

The package implements the treatment-group bootstrap (resample treated units
only, rematch each resample against the full control pool) together with
three common baselines, plus a Monte Carlo harness for comparing them.
"""

from attboot.bootstrap import (
    BootstrapConfig,
    BootstrapResult,
    bootstrap,
    paired_bootstrap,
    separate_bootstrap,
    summarize,
    treatment_bootstrap,
    whole_sample_bootstrap,
)
from attboot.data import Dataset, load_dataset, load_manifest, split_by_treatment, write_dataset
from attboot.errors import (
    AttbootError,
    BootstrapError,
    CalibrationError,
    CommonSupportError,
    DataError,
    MatchingError,
)
from attboot.estimator import AttEstimate, att_estimate, atc_estimate
from attboot.matching import MatchedSample, MatchSpec, match_pairs, match_resample
from attboot.propensity import PropensityModel, fit_propensity, score

__version__ = "0.1.0"

__all__ = [
    "AttEstimate",
    "AttbootError",
    "BootstrapConfig",
    "BootstrapError",
    "BootstrapResult",
    "CalibrationError",
    "CommonSupportError",
    "DataError",
    "Dataset",
    "MatchSpec",
    "MatchedSample",
    "MatchingError",
    "PropensityModel",
    "atc_estimate",
    "att_estimate",
    "bootstrap",
    "fit_propensity",
    "load_dataset",
    "load_manifest",
    "match_pairs",
    "match_resample",
    "paired_bootstrap",
    "score",
    "separate_bootstrap",
    "split_by_treatment",
    "summarize",
    "treatment_bootstrap",
    "whole_sample_bootstrap",
    "write_dataset",
]
