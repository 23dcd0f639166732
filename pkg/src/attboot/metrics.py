"""Balance and diagnostic metrics, and Monte Carlo aggregation."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from attboot.data import Dataset, split_by_treatment


class UndefinedBalanceWarning(UserWarning):
    pass


def standardization_sd(d: Dataset, scale: str = "treated") -> np.ndarray:
    """Per-covariate SD used to standardize mean differences.

    ``"treated"``: SD of the treated group in ``d`` (ddof=1).
    ``"pooled"``: sqrt of the average of the treated and control variances.
    Covariates where the SD is zero or undefined come back as NaN.
    """
    treated, control = split_by_treatment(d)
    x = d.covariates

    def var(rows):
        if rows.size < 2:
            return np.full(d.p, np.nan)
        return x[rows].var(axis=0, ddof=1)

    if scale == "treated":
        v = var(treated)
    elif scale == "pooled":
        v = 0.5 * (var(treated) + var(control))
    else:
        raise ValueError(f"unknown scale {scale!r}; use 'treated' or 'pooled'")
    sd = np.sqrt(v)
    sd[~(sd > 0)] = np.nan
    return sd


def masmd_from_arrays(x_treated: np.ndarray, x_control: np.ndarray, sd: np.ndarray) -> float:
    """Max over covariates of |mean difference| / sd; NaN sd entries are skipped."""
    diff = np.abs(x_treated.mean(axis=0) - x_control.mean(axis=0)) / sd
    ok = ~np.isnan(diff)
    if not ok.any():
        return math.nan
    return float(diff[ok].max())


def masmd(d: Dataset, treated, control, sd: np.ndarray | None = None, scale: str = "treated") -> float:
    """Maximum absolute standardized mean difference between two row multisets.

    ``treated`` and ``control`` are row indices into ``d`` (repeats count).
    ``sd`` defaults to :func:`standardization_sd` of ``d``; pass the original
    sample's SD when ``d`` rows come from a resample.
    """
    treated = np.asarray(treated, dtype=np.intp)
    control = np.asarray(control, dtype=np.intp)
    if treated.size == 0 or control.size == 0:
        raise ValueError("masmd needs non-empty treated and control groups")
    if sd is None:
        sd = standardization_sd(d, scale)
    sd = np.asarray(sd, dtype=float)
    if np.isnan(sd).any():
        warnings.warn(
            f"{int(np.isnan(sd).sum())} covariate(s) have zero or undefined SD; excluded from MASMD",
            UndefinedBalanceWarning,
            stacklevel=2,
        )
    return masmd_from_arrays(d.covariates[treated], d.covariates[control], sd)


def coverage(ci_list, true_effect: float) -> float:
    """Fraction of (low, high) intervals with low <= true_effect <= high."""
    ci = np.asarray(list(ci_list), dtype=float).reshape(-1, 2)
    if ci.shape[0] == 0:
        raise ValueError("coverage needs at least one interval")
    return float(np.mean((ci[:, 0] <= true_effect) & (true_effect <= ci[:, 1])))


def overlap_size(treated_scores, control_scores) -> float:
    """Length of the common score range over the length of the combined range."""
    t = np.asarray(treated_scores, dtype=float)
    c = np.asarray(control_scores, dtype=float)
    if t.size == 0 or c.size == 0:
        raise ValueError("overlap_size needs non-empty score sets")
    lo = max(t.min(), c.min(), 0.0)
    hi = min(t.max(), c.max(), 1.0)
    span = max(t.max(), c.max()) - min(t.min(), c.min())
    if hi < lo:
        return 0.0
    if span == 0.0:
        # both groups sit on a single identical score
        return 1.0
    return float((hi - lo) / span)


def avg_potential_matches(treated_scores, control_scores, caliper: float) -> float:
    """Mean number of controls within ``caliper`` of each treated score."""
    if caliper < 0:
        raise ValueError("caliper must be >= 0")
    t = np.asarray(treated_scores, dtype=float)
    c = np.sort(np.asarray(control_scores, dtype=float))
    if t.size == 0:
        return 0.0
    lo = np.searchsorted(c, t - caliper, side="left")
    hi = np.searchsorted(c, t + caliper, side="right")
    # searchsorted bounds are computed on rounded t +/- caliper; settle the edges exactly
    for k in range(t.size):
        while lo[k] > 0 and abs(t[k] - c[lo[k] - 1]) <= caliper:
            lo[k] -= 1
        while lo[k] < hi[k] and abs(t[k] - c[lo[k]]) > caliper:
            lo[k] += 1
        while hi[k] < c.size and abs(t[k] - c[hi[k]]) <= caliper:
            hi[k] += 1
        while hi[k] > lo[k] and abs(t[k] - c[hi[k] - 1]) > caliper:
            hi[k] -= 1
    return float(np.mean(hi - lo))


@dataclass(frozen=True)
class ScenarioSummary:
    coverage_rate: float
    avg_se: float
    avg_masmd: float
    avg_overlap: float
    avg_potential_matches: float
    n_replications: int

    def to_dict(self) -> dict:
        return asdict(self)


class ScenarioAccumulator:
    """Streaming aggregation of per-replication results into a ScenarioSummary.

    Replications whose bootstrap failed (NaN se) are counted in
    ``n_failed`` and left out of every average.
    """

    def __init__(self, true_effect: float):
        self.true_effect = float(true_effect)
        self.n = 0
        self.n_failed = 0
        self._covered = 0
        self._sums = {"se": 0.0, "masmd": 0.0, "overlap": 0.0, "potential": 0.0}
        self._counts = {"masmd": 0, "overlap": 0, "potential": 0}

    def add(self, ci_low, ci_high, se, masmd_value, overlap, potential) -> None:
        if se is None or not math.isfinite(se):
            self.n_failed += 1
            return
        self.n += 1
        self._covered += int(ci_low <= self.true_effect <= ci_high)
        self._sums["se"] += se
        for key, value in (("masmd", masmd_value), ("overlap", overlap), ("potential", potential)):
            if value is not None and math.isfinite(value):
                self._sums[key] += value
                self._counts[key] += 1

    def _mean(self, key):
        n = self.n if key == "se" else self._counts[key]
        return self._sums[key] / n if n else math.nan

    def summary(self) -> ScenarioSummary:
        return ScenarioSummary(
            coverage_rate=self._covered / self.n if self.n else math.nan,
            avg_se=self._mean("se"),
            avg_masmd=self._mean("masmd"),
            avg_overlap=self._mean("overlap"),
            avg_potential_matches=self._mean("potential"),
            n_replications=self.n,
        )
