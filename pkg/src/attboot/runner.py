"""Experiment orchestration: Monte Carlo grid, placebo study, single runs.

Every random quantity is keyed on the plan seed plus the task's coordinates
(prevalence, sample size, replication, method), so results do not depend on
the number of workers or the order in which tasks finish. Output rows are
written in task order; an interrupted grid run resumes from the rows already
on disk and produces the same files as an uninterrupted one.
"""

from __future__ import annotations

import collections
import csv
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from attboot.bootstrap import METHODS, BootstrapConfig, BootstrapResult, bootstrap, prepare
from attboot.data import Dataset, load_dataset, load_manifest, validate_manifest
from attboot.dgp import DgpConfig, draw_sample, generate_superpopulation
from attboot.errors import AttbootError, DataError
from attboot.matching import MatchSpec
from attboot.metrics import ScenarioAccumulator, avg_potential_matches, overlap_size
from attboot.rng import Streams, derive_seed

WORKERS_ENV = "ATTBOOT_WORKERS"

REPLICATION_COLUMNS = [
    "rep",
    "status",
    "point_estimate",
    "se",
    "ci_low",
    "ci_high",
    "covered",
    "avg_masmd",
    "point_masmd",
    "n_pairs",
    "n_dropped",
    "n_failed",
    "overlap",
    "potential_matches",
]
SUMMARY_COLUMNS = [
    "method",
    "prevalence",
    "n",
    "coverage",
    "avg_se",
    "avg_masmd",
    "avg_overlap",
    "avg_potential_matches",
    "n_replications",
    "n_failed",
]


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, int(workers))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _single_thread_blas():
    return threadpool_limits(limits=1)


def _worker_init():
    threadpool_limits(limits=1)


def ordered_map(fn, tasks, workers: int):
    """Yield ``fn(task)`` in task order, with a bounded number in flight."""
    if workers <= 1:
        with _single_thread_blas():
            for t in tasks:
                yield fn(t)
        return
    window = 4 * workers
    with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init) as pool:
        pending = collections.deque()
        it = iter(tasks)
        for t in it:
            pending.append(pool.submit(fn, t))
            if len(pending) >= window:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()


# ----------------------------------------------------------------------------
# Monte Carlo grid


@dataclass(frozen=True)
class ExperimentPlan:
    prevalences: tuple[float, ...]
    sample_sizes: tuple[int, ...]
    methods: tuple[str, ...] = METHODS
    mc_replications: int = 500
    B: int = 500
    seed: int = 0
    output_dir: str = "results"
    caliper: float = 0.02
    superpop_size: int = 1_000_000
    dgp: dict = field(default_factory=dict)
    cache_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "prevalences", tuple(float(p) for p in self.prevalences))
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.prevalences or not self.sample_sizes or not self.methods:
            raise ValueError("prevalences, sample_sizes and methods must be non-empty")
        if int(self.mc_replications) < 1:
            raise ValueError("mc_replications must be >= 1")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown plan keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentPlan":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def results_hash(self) -> str:
        """Hash of everything that determines the numbers (not where they go)."""
        d = asdict(self)
        d.pop("output_dir")
        d.pop("cache_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def dgp_config(self, prevalence: float) -> DgpConfig:
        return DgpConfig(
            target_prevalence=prevalence,
            superpop_size=self.superpop_size,
            seed=derive_seed(self.seed, "superpop"),
            **self.dgp,
        )


def scenario_tag(prevalence: float, n: int) -> str:
    return f"p{prevalence:.2f}_n{n}"


_SUPERPOP_CACHE: dict = {}


def _superpop(cfg: DgpConfig, cache_dir):
    key = (cfg, str(cache_dir))
    if key not in _SUPERPOP_CACHE:
        _SUPERPOP_CACHE.clear()  # one population resident per process
        _SUPERPOP_CACHE[key] = generate_superpopulation(cfg, cache_dir)
    return _SUPERPOP_CACHE[key]


def _grid_task(task):
    plan, prevalence, n, rep = task
    sp = _superpop(plan.dgp_config(prevalence), plan.cache_dir)
    true_effect = sp.config.true_effect
    sample = draw_sample(sp, n, derive_seed(plan.seed, "sample", prevalence, n, rep))
    spec = MatchSpec(caliper=plan.caliper)
    boot_seed = derive_seed(plan.seed, "bootstrap", prevalence, n, rep)
    rows = {}
    try:
        prep = prepare(sample, spec)
    except (AttbootError, ValueError) as exc:
        for m in plan.methods:
            rows[m] = _failed_row(rep, exc)
        return rows
    t_scores = prep.scores[prep.treated]
    c_scores = prep.scores[prep.control]
    overlap = overlap_size(t_scores, c_scores)
    potential = avg_potential_matches(t_scores, c_scores, plan.caliper)
    for m in plan.methods:
        cfg = BootstrapConfig(method=m, B=plan.B, seed=boot_seed, match_spec=spec)
        try:
            res = bootstrap(sample, cfg, prepared=prep, workers=1)
        except (AttbootError, ValueError) as exc:
            rows[m] = _failed_row(rep, exc)
            continue
        masmds = res.replicate_masmd[~np.isnan(res.replicate_masmd)]
        rows[m] = {
            "rep": rep,
            "status": "ok",
            "point_estimate": res.point_estimate,
            "se": res.se,
            "ci_low": res.ci_low,
            "ci_high": res.ci_high,
            "covered": res.ci_low <= true_effect <= res.ci_high,
            "avg_masmd": float(masmds.mean()) if masmds.size else math.nan,
            "point_masmd": res.point_masmd,
            "n_pairs": res.n_pairs,
            "n_dropped": res.n_dropped,
            "n_failed": res.n_failed,
            "overlap": overlap,
            "potential_matches": potential,
        }
    return rows


def _failed_row(rep, exc) -> dict:
    row = {c: math.nan for c in REPLICATION_COLUMNS}
    row.update(rep=rep, status=f"failed:{type(exc).__name__}", covered=False, n_pairs=0, n_dropped=0, n_failed=0)
    return row


def _parse_row(rec: dict) -> dict:
    out = dict(rec)
    for k in ("rep", "covered", "n_pairs", "n_dropped", "n_failed"):
        out[k] = int(float(rec[k])) if rec[k] not in ("nan", "") else 0
    for k in ("point_estimate", "se", "ci_low", "ci_high", "avg_masmd", "point_masmd", "overlap", "potential_matches"):
        out[k] = float(rec[k])
    return out


def _read_complete_rows(path: Path) -> list[dict]:
    """Rows from a replication CSV, ignoring a torn final line."""
    if not path.exists():
        return []
    text = path.read_text()
    lines = text.split("\n")
    if not text.endswith("\n"):
        lines = lines[:-1]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0].split(",") != REPLICATION_COLUMNS:
        return []
    rows = []
    for ln in lines[1:]:
        vals = ln.split(",")
        if len(vals) != len(REPLICATION_COLUMNS):
            break
        rows.append(_parse_row(dict(zip(REPLICATION_COLUMNS, vals))))
    return rows


def _write_rows(path: Path, rows: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(REPLICATION_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in REPLICATION_COLUMNS) + "\n")


def _accumulate(acc: ScenarioAccumulator, row: dict) -> None:
    se = row["se"] if row["status"] == "ok" else math.nan
    acc.add(row["ci_low"], row["ci_high"], se, row["avg_masmd"], row["overlap"], row["potential_matches"])


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def run_grid(plan: ExperimentPlan, workers: int | None = None, progress=None) -> list[dict]:
    """Run every (method x prevalence x sample size) scenario of ``plan``.

    Writes, under ``plan.output_dir``:

    - ``replications/<method>__<scenario>.csv``: one row per Monte Carlo replication
    - ``summary.csv``: one row per method and scenario
    - ``plot_data.csv``: the summary in long (tidy) form
    - ``manifest.json``: plan, hashes, derived seeds and library versions

    Returns the summary rows as dicts.
    """
    workers = resolve_workers(workers)
    out = Path(plan.output_dir)
    rep_dir = out / "replications"
    rep_dir.mkdir(parents=True, exist_ok=True)
    if plan.cache_dir is None:
        plan = ExperimentPlan.from_dict({**asdict(plan), "cache_dir": str(out / "cache")})

    plan_file = out / "plan.json"
    plan_hash = plan.results_hash()
    if plan_file.exists():
        previous = json.loads(plan_file.read_text())
        if previous.get("results_hash") != plan_hash:
            raise AttbootError(
                f"{out} holds results of a different plan; choose another output_dir or delete it"
            )
    else:
        _atomic_write(plan_file, json.dumps({"results_hash": plan_hash, "plan": asdict(plan)}, indent=2) + "\n")

    scenarios = [(p, n) for p in plan.prevalences for n in plan.sample_sizes]
    # build populations up front so workers only ever load them
    superpops = {}
    for p in plan.prevalences:
        sp = generate_superpopulation(plan.dgp_config(p), plan.cache_dir)
        superpops[p] = {"intercept": sp.intercept, "realized_prevalence": sp.realized_prevalence}
        true_effect = sp.config.true_effect
        del sp

    accs = {}
    handles = {}
    tasks = []
    try:
        for p, n in scenarios:
            tag = scenario_tag(p, n)
            paths = {m: rep_dir / f"{m}__{tag}.csv" for m in plan.methods}
            existing = {m: _read_complete_rows(paths[m]) for m in plan.methods}
            k = min(len(v) for v in existing.values())
            k = min(k, plan.mc_replications)
            for m in plan.methods:
                acc = accs[(m, p, n)] = ScenarioAccumulator(true_effect)
                rows = existing[m][:k]
                _write_rows(paths[m], rows)  # drop anything past the last full replication
                for r in rows:
                    _accumulate(acc, r)
                handles[(m, p, n)] = open(paths[m], "a")
            tasks.extend((plan, p, n, rep) for rep in range(k, plan.mc_replications))

        for task, rows in zip(tasks, ordered_map(_grid_task, tasks, workers)):
            _, p, n, rep = task
            for m in plan.methods:
                row = rows[m]
                fh = handles[(m, p, n)]
                fh.write(",".join(_fmt(row[c]) for c in REPLICATION_COLUMNS) + "\n")
                fh.flush()
                _accumulate(accs[(m, p, n)], row)
            if progress is not None:
                progress(p, n, rep)
    finally:
        for fh in handles.values():
            fh.close()

    summary = []
    for m in plan.methods:
        for p, n in scenarios:
            acc = accs[(m, p, n)]
            s = acc.summary()
            summary.append(
                {
                    "method": m,
                    "prevalence": p,
                    "n": n,
                    "coverage": s.coverage_rate,
                    "avg_se": s.avg_se,
                    "avg_masmd": s.avg_masmd,
                    "avg_overlap": s.avg_overlap,
                    "avg_potential_matches": s.avg_potential_matches,
                    "n_replications": s.n_replications,
                    "n_failed": acc.n_failed,
                }
            )
    lines = [",".join(SUMMARY_COLUMNS)]
    lines += [",".join(_fmt(r[c]) for c in SUMMARY_COLUMNS) for r in summary]
    _atomic_write(out / "summary.csv", "\n".join(lines) + "\n")

    plot = ["figure,quantity,method,prevalence,n,value"]
    for r in summary:
        for fig, q in (
            ("fig1", "coverage"),
            ("fig2", "avg_se"),
            ("fig3", "avg_masmd"),
            ("appendix_a", "avg_overlap"),
            ("appendix_b", "avg_potential_matches"),
        ):
            plot.append(f"{fig},{q},{r['method']},{_fmt(r['prevalence'])},{r['n']},{_fmt(r[q])}")
    _atomic_write(out / "plot_data.csv", "\n".join(plot) + "\n")

    manifest = {
        "results_hash": plan_hash,
        "plan": asdict(plan),
        "superpopulations": {_fmt(p): v for p, v in superpops.items()},
        "seeds": {
            "superpop": derive_seed(plan.seed, "superpop"),
        },
        "versions": _versions(),
    }
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return summary


def _versions() -> dict:
    import numba

    from attboot import __version__

    return {
        "attboot": __version__,
        "numpy": np.__version__,
        "numba": numba.__version__,
        "python": sys.version.split()[0],
    }


def read_summary(path) -> list[dict]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["prevalence"] = float(r["prevalence"])
        r["n"] = int(r["n"])
        r["n_replications"] = int(r["n_replications"])
        r["n_failed"] = int(r["n_failed"])
        for k in ("coverage", "avg_se", "avg_masmd", "avg_overlap", "avg_potential_matches"):
            r[k] = float(r[k])
    return rows


# ----------------------------------------------------------------------------
# Placebo study


@dataclass(frozen=True)
class PlaceboPlan:
    dataset: str
    manifest: dict | str
    n_treated: int = 175
    n_assignments: int = 1000
    n_bootstrap_runs: int = 100
    B: int = 500
    seed: int = 0
    output_dir: str | None = None
    caliper: float = 0.02
    methods: tuple[str, ...] = ("treatment",)

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.n_bootstrap_runs > self.n_assignments:
            raise ValueError("n_bootstrap_runs cannot exceed n_assignments")
        if self.n_treated < 1:
            raise ValueError("n_treated must be >= 1")

    @classmethod
    def from_json(cls, path) -> "PlaceboPlan":
        with open(path) as fh:
            d = json.load(fh)
        base = Path(path).parent
        for key in ("dataset", "manifest"):
            if isinstance(d.get(key), str) and not os.path.isabs(d[key]):
                d[key] = str(base / d[key])
        return cls(**d)

    def load(self) -> Dataset:
        schema = load_manifest(self.manifest) if isinstance(self.manifest, str) else validate_manifest(self.manifest)
        return load_dataset(self.dataset, schema)


def _placebo_assignment(args):
    d, plan, a = args
    rng = Streams(plan.seed, "placebo", "assign")(a)
    rows = rng.choice(d.n, size=plan.n_treated, replace=False)
    z = np.zeros(d.n, dtype=np.int8)
    z[rows] = 1
    try:
        prep = prepare(d.with_treatment(z), MatchSpec(caliper=plan.caliper))
    except AttbootError:
        return {"assignment": a, "att": math.nan, "n_pairs": 0}
    return {"assignment": a, "att": prep.estimate.value, "n_pairs": prep.estimate.n_pairs}


def _placebo_bootstrap(args):
    d, plan, a = args
    rng = Streams(plan.seed, "placebo", "assign")(a)
    rows = rng.choice(d.n, size=plan.n_treated, replace=False)
    z = np.zeros(d.n, dtype=np.int8)
    z[rows] = 1
    da = d.with_treatment(z)
    spec = MatchSpec(caliper=plan.caliper)
    out = []
    try:
        prep = prepare(da, spec)
    except AttbootError as exc:
        return [{"assignment": a, "method": m, "status": f"failed:{type(exc).__name__}"} for m in plan.methods]
    for m in plan.methods:
        cfg = BootstrapConfig(method=m, B=plan.B, seed=derive_seed(plan.seed, "placebo", "bootstrap", a), match_spec=spec)
        try:
            r = bootstrap(da, cfg, prepared=prep, workers=1)
        except AttbootError as exc:
            out.append({"assignment": a, "method": m, "status": f"failed:{type(exc).__name__}"})
            continue
        out.append(
            {
                "assignment": a,
                "method": m,
                "status": "ok",
                "point_estimate": r.point_estimate,
                "se": r.se,
                "ci_low": r.ci_low,
                "ci_high": r.ci_high,
                "traps_zero": r.ci_low <= 0.0 <= r.ci_high,
            }
        )
    return out


def run_placebo(plan: PlaceboPlan, workers: int | None = None, data: Dataset | None = None) -> dict:
    """Random-label placebo study on a dataset with no real treatment.

    ``n_assignments`` times, label ``n_treated`` random rows as treated and
    compute the matched ATT (true effect zero). Then, for
    ``n_bootstrap_runs`` of those assignments chosen at random, run each
    bootstrap method and record whether its interval contains zero.
    """
    workers = resolve_workers(workers)
    d = data if data is not None else plan.load()
    if d.n_treated:
        raise DataError("placebo dataset must contain no treated units")
    if plan.n_treated >= d.n:
        raise DataError(f"n_treated ({plan.n_treated}) must be smaller than the {d.n} dataset rows")

    assignments = list(ordered_map(_placebo_assignment, [(d, plan, a) for a in range(plan.n_assignments)], workers))
    chosen = np.sort(Streams(plan.seed, "placebo", "choose")(0).choice(plan.n_assignments, plan.n_bootstrap_runs, replace=False))
    runs = [row for rows in ordered_map(_placebo_bootstrap, [(d, plan, int(a)) for a in chosen], workers) for row in rows]

    atts = np.array([r["att"] for r in assignments])
    valid = atts[~np.isnan(atts)]
    report = {
        "n_rows": d.n,
        "n_treated": plan.n_treated,
        "n_assignments": plan.n_assignments,
        "n_valid_assignments": int(valid.size),
        "mean_att": float(valid.mean()) if valid.size else math.nan,
        "sd_att": float(valid.std(ddof=1)) if valid.size > 1 else math.nan,
        "se_mean_att": float(valid.std(ddof=1) / math.sqrt(valid.size)) if valid.size > 1 else math.nan,
        "methods": {},
    }
    for m in plan.methods:
        ok = [r for r in runs if r["method"] == m and r["status"] == "ok"]
        report["methods"][m] = {
            "n_runs": len(ok),
            "n_failed": sum(1 for r in runs if r["method"] == m and r["status"] != "ok"),
            "n_trap_zero": sum(bool(r["traps_zero"]) for r in ok),
            "trap_rate": (sum(bool(r["traps_zero"]) for r in ok) / len(ok)) if ok else math.nan,
            "mean_se": float(np.mean([r["se"] for r in ok])) if ok else math.nan,
        }

    if plan.output_dir:
        out = Path(plan.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["assignment,att,n_pairs"] + [f"{r['assignment']},{_fmt(r['att'])},{r['n_pairs']}" for r in assignments]
        _atomic_write(out / "placebo_atts.csv", "\n".join(lines) + "\n")
        cols = ["assignment", "method", "status", "point_estimate", "se", "ci_low", "ci_high", "traps_zero"]
        lines = [",".join(cols)] + [",".join(_fmt(r.get(c, math.nan)) for c in cols) for r in runs]
        _atomic_write(out / "bootstrap_runs.csv", "\n".join(lines) + "\n")
        _atomic_write(out / "report.json", json.dumps(_jsonable(report), indent=2) + "\n")
    report["assignments"] = assignments
    report["runs"] = runs
    return report


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


# ----------------------------------------------------------------------------
# Single dataset


def run_single(
    data_path,
    manifest,
    method: str = "treatment",
    B: int = 500,
    seed: int = 0,
    *,
    caliper: float = 0.02,
    algorithm: str = "optimal",
    refit_propensity: bool = False,
    estimand: str = "att",
    workers: int | None = None,
) -> BootstrapResult:
    """Full pipeline (fit, match, estimate, bootstrap) on a user dataset."""
    schema = load_manifest(manifest) if isinstance(manifest, (str, os.PathLike)) else validate_manifest(manifest)
    d = load_dataset(data_path, schema)
    cfg = BootstrapConfig(
        method=method,
        B=B,
        seed=seed,
        refit_propensity=refit_propensity,
        estimand=estimand,
        match_spec=MatchSpec(caliper=caliper, algorithm=algorithm),
    )
    with _single_thread_blas():
        return bootstrap(d, cfg, workers=resolve_workers(workers))
