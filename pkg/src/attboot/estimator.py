"""ATT (and mirrored ATC) point estimates from matched samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from attboot.data import Dataset
from attboot.errors import CommonSupportError, MatchingError
from attboot.matching import MatchedSample


@dataclass(frozen=True)
class AttEstimate:
    value: float
    n_pairs: int
    n_dropped: int


def mean_pair_difference(outcome: np.ndarray, treated: np.ndarray, control: np.ndarray) -> float:
    """Mean of ``outcome[treated] - outcome[control]`` over pairs."""
    return float(np.mean(outcome[treated] - outcome[control]))


def _check(d: Dataset, m: MatchedSample) -> None:
    if m.n_pairs == 0:
        if m.common_support_failed:
            raise CommonSupportError("all treated units dropped: no caliper-feasible pairs")
        raise MatchingError("empty pair list")
    for name, idx in (("treated", m.treated), ("control", m.control)):
        if idx.min() < 0 or idx.max() >= d.n:
            raise IndexError(f"{name} index out of range for dataset of {d.n} rows")


def att_estimate(d: Dataset, m: MatchedSample) -> AttEstimate:
    """Mean outcome difference between matched treated occurrences and their controls.

    A treated unit that occurs several times (bootstrap resample) counts once
    per occurrence.
    """
    _check(d, m)
    value = mean_pair_difference(d.outcome, m.treated, m.control)
    return AttEstimate(value, m.n_pairs, int(m.dropped_treated.size))


def atc_estimate(d: Dataset, m: MatchedSample) -> AttEstimate:
    """ATC from a matching built with roles swapped.

    ``m.treated`` holds the focal control-group units and ``m.control`` their
    matched treated units. The sign stays treated-minus-control.
    """
    _check(d, m)
    value = mean_pair_difference(d.outcome, m.control, m.treated)
    return AttEstimate(value, m.n_pairs, int(m.dropped_treated.size))
