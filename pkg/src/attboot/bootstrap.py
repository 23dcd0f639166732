"""Bootstrap standard errors for matched-pair ATT estimates.

Four resampling schemes share one pipeline (fit propensity, match, take the
mean pair difference):

``treatment``
    Resample the treated group with replacement (same size) and rematch every
    resample against the full original control pool.
``separate``
    Resample treated and control groups independently, then rematch.
``paired``
    Match once, then resample the matched pairs. No rematching.
``whole_sample``
    Resample all N rows; group sizes float from replicate to replicate.

The standard error is the root mean squared deviation of the replicate
estimates from the original-sample estimate, and the interval is
``estimate +/- 1.96 * se``.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from attboot.data import Dataset, split_by_treatment
from attboot.errors import BootstrapError, CommonSupportError
from attboot.estimator import AttEstimate, att_estimate
from attboot.matching import MatchedSample, MatchSpec, match_pairs, match_sorted
from attboot.metrics import masmd_from_arrays, standardization_sd
from attboot.propensity import PerfectSeparationWarning, PropensityModel, fit_propensity
from attboot.rng import Streams

METHODS = ("treatment", "separate", "paired", "whole_sample")
ESTIMANDS = ("att", "atc")
Z_95 = 1.96


@dataclass(frozen=True)
class BootstrapConfig:
    method: str = "treatment"
    B: int = 500
    refit_propensity: bool = False
    seed: int = 0
    match_spec: MatchSpec = field(default_factory=MatchSpec)
    estimand: str = "att"
    # abort when more than this fraction of replicates has no feasible pair
    max_failure_rate: float = 0.1
    balance_scale: str = "treated"
    # paired replicates reuse one matching; "matching" reports that matching's
    # balance, "resample" the balance of the resampled pairs
    paired_balance: str = "matching"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown bootstrap method {self.method!r}; use one of {METHODS}")
        if int(self.B) < 1:
            raise ValueError(f"B must be >= 1, got {self.B}")
        if self.estimand not in ESTIMANDS:
            raise ValueError(f"estimand must be one of {ESTIMANDS}")
        if self.paired_balance not in ("matching", "resample"):
            raise ValueError("paired_balance must be 'matching' or 'resample'")
        if not 0.0 <= self.max_failure_rate <= 1.0:
            raise ValueError("max_failure_rate must be in [0, 1]")


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    method: str
    estimand: str
    B: int
    seed: int
    replicate_atts: np.ndarray  # NaN marks a failed replicate
    point_estimate: float
    se: float
    ci_low: float
    ci_high: float
    replicate_masmd: np.ndarray
    n_failed: int
    n_pairs: int
    n_dropped: int
    point_masmd: float

    def to_dict(self) -> dict:
        def num(v):
            v = float(v)
            return v if math.isfinite(v) else None

        return {
            "method": self.method,
            "estimand": self.estimand,
            "B": int(self.B),
            "seed": int(self.seed),
            "point_estimate": num(self.point_estimate),
            "se": num(self.se),
            "ci_low": num(self.ci_low),
            "ci_high": num(self.ci_high),
            "n_failed": int(self.n_failed),
            "n_pairs": int(self.n_pairs),
            "n_dropped": int(self.n_dropped),
            "point_masmd": num(self.point_masmd),
            "replicate_atts": [num(v) for v in self.replicate_atts],
            "replicate_masmd": [num(v) for v in self.replicate_masmd],
        }

    def to_json(self, path=None, **kwargs) -> str:
        text = json.dumps(self.to_dict(), **kwargs)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def write_replicates_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("replicate_att\n")
            for v in self.replicate_atts.tolist():
                fh.write(("" if math.isnan(v) else repr(v)) + "\n")


@dataclass(frozen=True, eq=False)
class PreparedSample:
    """Steps 1-3 on the original sample, reused by every replicate."""

    data: Dataset
    model: PropensityModel
    treated: np.ndarray
    control: np.ndarray
    match: MatchedSample
    estimate: AttEstimate
    sd: np.ndarray
    spec: MatchSpec
    point_masmd: float
    # control pool pre-sorted by (score, row) for the no-refit path
    control_sorted: np.ndarray
    control_sorted_scores: np.ndarray

    @property
    def scores(self) -> np.ndarray:
        return self.model.scores


def _fit(d: Dataset, ridge: float = 0.0) -> PropensityModel:
    with warnings.catch_warnings():
        # separation is expected in small resamples; the model carries the flag
        warnings.simplefilter("ignore", PerfectSeparationWarning)
        return fit_propensity(d, ridge=ridge)


def prepare(
    d: Dataset,
    spec: MatchSpec | None = None,
    balance_scale: str = "treated",
    model: PropensityModel | None = None,
) -> PreparedSample:
    """Fit the propensity model, match the sample and compute the point estimate."""
    spec = spec or MatchSpec()
    d.require_both_groups()
    model = model or _fit(d)
    treated, control = split_by_treatment(d)
    s = model.scores
    m = match_pairs(s[treated], s[control], spec, treated_ids=treated, control_ids=control)
    if m.n_pairs == 0:
        raise CommonSupportError(
            "no treated unit has a control within the caliper on the original sample"
        )
    est = att_estimate(d, m)
    sd = standardization_sd(d, balance_scale)
    point_masmd = masmd_from_arrays(d.covariates[m.treated], d.covariates[m.control], sd)
    order = np.argsort(s[control], kind="stable")
    return PreparedSample(
        data=d,
        model=model,
        treated=treated,
        control=control,
        match=m,
        estimate=est,
        sd=sd,
        spec=spec,
        point_masmd=point_masmd,
        control_sorted=control[order],
        control_sorted_scores=np.ascontiguousarray(s[control][order]),
    )


def _match_rows(t_rows, t_scores, c_rows, c_scores, spec, c_presorted=False):
    """Match treated rows to control rows; rows may repeat. Returns paired row arrays."""
    t_order = np.argsort(t_scores, kind="stable")
    if c_presorted:
        c_order = None
        cs = c_scores
    else:
        c_order = np.argsort(c_scores, kind="stable")
        cs = np.ascontiguousarray(c_scores[c_order])
    pt, pc = match_sorted(np.ascontiguousarray(t_scores[t_order]), cs, spec.caliper, spec.algorithm)
    pair_t = t_rows[t_order[pt]]
    pair_c = c_rows[pc] if c_order is None else c_rows[c_order[pc]]
    return pair_t, pair_c


def _refit_scores(d: Dataset, rows: np.ndarray) -> np.ndarray:
    return _fit(d.subset(rows)).scores


def _replicate(prep: PreparedSample, cfg: BootstrapConfig, rng: np.random.Generator):
    """One bootstrap replicate -> (att, masmd), or (nan, nan) if it has no pairs."""
    d = prep.data
    y = d.outcome
    x = d.covariates
    spec = cfg.match_spec
    n1 = prep.treated.size
    n0 = prep.control.size

    if cfg.method == "paired":
        k = prep.match.n_pairs
        draw = rng.integers(0, k, size=k)
        pt = prep.match.treated[draw]
        pc = prep.match.control[draw]
        if cfg.paired_balance == "matching":
            return float(np.mean(y[pt] - y[pc])), prep.point_masmd
    elif cfg.method == "treatment":
        t_rows = np.sort(prep.treated[rng.integers(0, n1, size=n1)])
        if cfg.refit_propensity:
            rows = np.concatenate([t_rows, prep.control])
            s = _refit_scores(d, rows)
            pt, pc = _match_rows(t_rows, s[:n1], prep.control, s[n1:], spec)
        else:
            pt, pc = _match_rows(
                t_rows,
                prep.scores[t_rows],
                prep.control_sorted,
                prep.control_sorted_scores,
                spec,
                c_presorted=True,
            )
    elif cfg.method == "separate":
        t_rows = np.sort(prep.treated[rng.integers(0, n1, size=n1)])
        c_rows = np.sort(prep.control[rng.integers(0, n0, size=n0)])
        if cfg.refit_propensity:
            s = _refit_scores(d, np.concatenate([t_rows, c_rows]))
            ts, cs = s[:n1], s[n1:]
        else:
            ts, cs = prep.scores[t_rows], prep.scores[c_rows]
        pt, pc = _match_rows(t_rows, ts, c_rows, cs, spec)
    else:  # whole_sample
        rows = np.sort(rng.integers(0, d.n, size=d.n))
        z = d.treatment[rows]
        is_t = z == 1
        if is_t.all() or not is_t.any():
            return math.nan, math.nan
        if cfg.refit_propensity:
            s = _refit_scores(d, rows)
        else:
            s = prep.scores[rows]
        pt, pc = _match_rows(rows[is_t], s[is_t], rows[~is_t], s[~is_t], spec)

    if pt.size == 0:
        return math.nan, math.nan
    att = float(np.mean(y[pt] - y[pc]))
    return att, masmd_from_arrays(x[pt], x[pc], prep.sd)


def _run_replicates(prep: PreparedSample, cfg: BootstrapConfig, indices) -> np.ndarray:
    streams = Streams(cfg.seed, "bootstrap", cfg.method)
    out = np.empty((len(indices), 2))
    for k, r in enumerate(indices):
        out[k] = _replicate(prep, cfg, streams(r))
    return out


def summarize(replicates, point: float) -> tuple[float, float, float]:
    """Standard error about ``point`` and the normal 95% interval centered at ``point``.

    se = sqrt(mean((replicate - point)^2)).
    """
    r = np.asarray(replicates, dtype=float)
    if r.size < 2:
        raise ValueError(f"summarize needs at least 2 replicates, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise ValueError("replicates must be finite")
    se = math.sqrt(float(np.mean((r - point) ** 2)))
    return se, point - Z_95 * se, point + Z_95 * se


def _workers(workers) -> int:
    if workers is None:
        workers = int(os.environ.get("ATTBOOT_WORKERS", "1"))
    return max(1, int(workers))


def bootstrap(
    d: Dataset,
    cfg: BootstrapConfig,
    *,
    prepared: PreparedSample | None = None,
    workers: int | None = None,
) -> BootstrapResult:
    """Run ``cfg.B`` replicates of ``cfg.method`` on ``d``.

    Replicate ``r`` draws from its own counter-based stream, so the result is
    identical for any ``workers`` count. ``prepared`` lets several methods
    share one propensity fit and original-sample match; it must come from
    :func:`prepare` on the same data (on the label-swapped data for ATC).
    """
    sign = 1.0
    if cfg.estimand == "atc":
        # ATC = -(ATT with labels swapped); distances are unchanged by the swap
        sign = -1.0
        if prepared is None:
            d = d.swapped()
    if prepared is None:
        prepared = prepare(d, cfg.match_spec, cfg.balance_scale)
    if cfg.method == "paired" and prepared.match.n_pairs < 2:
        raise BootstrapError("paired bootstrap needs at least 2 matched pairs")

    B = int(cfg.B)
    n_workers = min(_workers(workers), B)
    if n_workers == 1:
        values = _run_replicates(prepared, cfg, range(B))
    else:
        chunks = [list(c) for c in np.array_split(np.arange(B), n_workers) if c.size]
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(_run_replicates, [prepared] * len(chunks), [cfg] * len(chunks), chunks))
        values = np.concatenate(parts)

    atts = sign * values[:, 0]
    ok = ~np.isnan(atts)
    n_failed = int(B - ok.sum())
    if n_failed > cfg.max_failure_rate * B:
        raise BootstrapError(
            f"{n_failed} of {B} replicates had no caliper-feasible pairs "
            f"(limit {cfg.max_failure_rate:.0%}); common support looks inadequate"
        )
    if ok.sum() < 2:
        raise BootstrapError("fewer than 2 successful replicates")
    point = sign * prepared.estimate.value
    se, lo, hi = summarize(atts[ok], point)
    return BootstrapResult(
        method=cfg.method,
        estimand=cfg.estimand,
        B=B,
        seed=int(cfg.seed),
        replicate_atts=atts,
        point_estimate=point,
        se=se,
        ci_low=lo,
        ci_high=hi,
        replicate_masmd=values[:, 1].copy(),
        n_failed=n_failed,
        n_pairs=prepared.estimate.n_pairs,
        n_dropped=prepared.estimate.n_dropped,
        point_masmd=prepared.point_masmd,
    )


def _with_method(cfg: BootstrapConfig, method: str) -> BootstrapConfig:
    return cfg if cfg.method == method else dataclasses.replace(cfg, method=method)


def treatment_bootstrap(d: Dataset, cfg: BootstrapConfig | None = None, **kwargs) -> BootstrapResult:
    """Resample the treated group only; rematch against the full control pool."""
    return bootstrap(d, _with_method(cfg or BootstrapConfig(), "treatment"), **kwargs)


def separate_bootstrap(d: Dataset, cfg: BootstrapConfig | None = None, **kwargs) -> BootstrapResult:
    return bootstrap(d, _with_method(cfg or BootstrapConfig(), "separate"), **kwargs)


def paired_bootstrap(d: Dataset, cfg: BootstrapConfig | None = None, **kwargs) -> BootstrapResult:
    return bootstrap(d, _with_method(cfg or BootstrapConfig(), "paired"), **kwargs)


def whole_sample_bootstrap(d: Dataset, cfg: BootstrapConfig | None = None, **kwargs) -> BootstrapResult:
    return bootstrap(d, _with_method(cfg or BootstrapConfig(), "whole_sample"), **kwargs)
