"""Super-population data generating process for the Monte Carlo study.

Ten independent standard-normal covariates. Treatment follows a logit model
on x1..x7 and the outcome a linear model on x4..x10, with a constant
treatment effect:

    logit(p) = a0 + w*x1 + m*x2 + s*x3 + w*x4 + m*x5 + s*x6 + vs*x7
    y        = effect*z + w*x4 + m*x5 + s*x6 + vs*x7 + w*x8 + m*x9 + s*x10 + eps

with eps ~ N(0, sigma). The intercept a0 is calibrated by bisection so the
mean treatment probability over the population's covariates hits the target
prevalence.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from attboot.data import Dataset
from attboot.errors import CalibrationError
from attboot.propensity import expit
from attboot.rng import Streams

N_COVARIATES = 10
CHUNK_ROWS = 100_000
GRID_PREVALENCES = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30)


@dataclass(frozen=True)
class DgpConfig:
    target_prevalence: float = 0.2
    superpop_size: int = 1_000_000
    # conventional weak / medium / strong / very strong log odds ratios
    alpha_w: float = math.log(1.25)
    alpha_m: float = math.log(1.5)
    alpha_s: float = math.log(1.75)
    alpha_vs: float = math.log(2.0)
    sigma: float = 3.0
    true_effect: float = 1.0
    seed: int = 2024
    calibration_tol: float = 1e-3
    calibration_max_iter: int = 200

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not 0.0 < self.target_prevalence < 1.0:
            raise ValueError("target_prevalence must lie in (0, 1)")
        if int(self.superpop_size) < 2:
            raise ValueError("superpop_size must be >= 2")

    def treatment_coefficients(self) -> np.ndarray:
        w, m, s, vs = self.alpha_w, self.alpha_m, self.alpha_s, self.alpha_vs
        return np.array([w, m, s, w, m, s, vs, 0.0, 0.0, 0.0])

    def outcome_coefficients(self) -> np.ndarray:
        w, m, s, vs = self.alpha_w, self.alpha_m, self.alpha_s, self.alpha_vs
        return np.array([0.0, 0.0, 0.0, w, m, s, vs, w, m, s])

    def cache_key(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=repr)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class SuperPopulation:
    data: Dataset
    intercept: float
    realized_prevalence: float
    config: DgpConfig

    def to_csv(self, path) -> None:
        from attboot.data import write_dataset

        write_dataset(self.data, path)


def calibrate_intercept(linear_predictor: np.ndarray, target: float, tol: float = 1e-3, max_iter: int = 200) -> float:
    """Intercept a0 with |mean(expit(a0 + lp)) - target| <= tol, by bisection."""
    lo, hi = -30.0, 30.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        gap = float(np.mean(expit(mid + linear_predictor))) - target
        if abs(gap) <= tol and hi - lo < 1e-6:
            return mid
        if gap > 0:
            hi = mid
        else:
            lo = mid
    mid = 0.5 * (lo + hi)
    if abs(float(np.mean(expit(mid + linear_predictor))) - target) > tol:
        raise CalibrationError(f"intercept calibration for prevalence {target} did not converge")
    return mid


def _generate(cfg: DgpConfig):
    n = int(cfg.superpop_size)
    x = np.empty((n, N_COVARIATES))
    u = np.empty(n)
    eps = np.empty(n)
    # one stream per chunk and purpose; chunk boundaries are fixed so the
    # output does not depend on how chunks are scheduled
    x_streams = Streams(cfg.seed, "dgp", "covariates")
    u_streams = Streams(cfg.seed, "dgp", "treatment")
    e_streams = Streams(cfg.seed, "dgp", "noise")
    for k, start in enumerate(range(0, n, CHUNK_ROWS)):
        stop = min(start + CHUNK_ROWS, n)
        x[start:stop] = x_streams(k).standard_normal((stop - start, N_COVARIATES))
        u[start:stop] = u_streams(k).random(stop - start)
        eps[start:stop] = e_streams(k).standard_normal(stop - start)
    lp = x @ cfg.treatment_coefficients()
    a0 = calibrate_intercept(lp, cfg.target_prevalence, cfg.calibration_tol, cfg.calibration_max_iter)
    z = (u < expit(a0 + lp)).astype(np.int8)
    y = cfg.true_effect * z + x @ cfg.outcome_coefficients() + cfg.sigma * eps
    return x, z, y, a0


def generate_superpopulation(cfg: DgpConfig, cache_dir: str | os.PathLike | None = None) -> SuperPopulation:
    """Build (or load from ``cache_dir``) the super population for ``cfg``.

    The cache is one directory per config hash holding ``covariates.npy``,
    ``treatment.npy``, ``outcome.npy`` and ``meta.json``; arrays are opened
    memory-mapped.
    """
    if cache_dir is not None:
        path = Path(cache_dir) / f"superpop-{cfg.cache_key()}"
        meta_file = path / "meta.json"
        if meta_file.exists():
            return _load(path, cfg)
        x, z, y, a0 = _generate(cfg)
        tmp = path.with_name(path.name + f".tmp{os.getpid()}")
        tmp.mkdir(parents=True, exist_ok=True)
        np.save(tmp / "covariates.npy", x)
        np.save(tmp / "treatment.npy", z)
        np.save(tmp / "outcome.npy", y)
        with open(tmp / "meta.json", "w") as fh:
            json.dump({"intercept": a0, "config": asdict(cfg)}, fh, indent=2)
        try:
            os.replace(tmp, path)
        except OSError:
            # another process finished first; keep theirs
            for f in tmp.iterdir():
                f.unlink()
            tmp.rmdir()
        return _load(path, cfg)
    x, z, y, a0 = _generate(cfg)
    return _build(x, z, y, a0, cfg)


def _build(x, z, y, a0, cfg) -> SuperPopulation:
    names = tuple(f"x{j + 1}" for j in range(N_COVARIATES))
    data = Dataset(x, z, y, names)
    return SuperPopulation(data, float(a0), float(np.mean(z)), cfg)


class _MappedDataset(Dataset):
    """Dataset over memory-mapped arrays; skips the validating copy."""

    def __post_init__(self):
        pass


def _load(path: Path, cfg: DgpConfig) -> SuperPopulation:
    with open(path / "meta.json") as fh:
        meta = json.load(fh)
    x = np.load(path / "covariates.npy", mmap_mode="r")
    z = np.load(path / "treatment.npy", mmap_mode="r")
    y = np.load(path / "outcome.npy", mmap_mode="r")
    names = tuple(f"x{j + 1}" for j in range(N_COVARIATES))
    # the arrays were validated when generated; wrap without copying
    data = _MappedDataset(x, z, y, names)
    return SuperPopulation(data, float(meta["intercept"]), float(np.mean(z)), cfg)


def draw_sample(sp: SuperPopulation, n: int, seed: int) -> Dataset:
    """Simple random sample of ``n`` rows without replacement."""
    big_n = sp.data.n
    if not 1 <= n <= big_n:
        raise ValueError(f"sample size {n} outside [1, {big_n}]")
    rng = Streams(seed, "sample")(0)
    rows = rng.permutation(big_n) if n == big_n else rng.choice(big_n, size=n, replace=False)
    d = sp.data
    return Dataset(
        np.asarray(d.covariates[rows]),
        np.asarray(d.treatment[rows]),
        np.asarray(d.outcome[rows]),
        d.covariate_names,
    )
