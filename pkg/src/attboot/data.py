"""Dataset container and CSV/JSON ingestion."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from attboot.errors import DataError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates, binary treatment and outcome for N units.

    Arrays are copied on construction and made read-only, so a Dataset can be
    shared between workers without defensive copies.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise DataError("covariates must be a 2-D array")
        z = np.asarray(self.treatment)
        y = np.asarray(self.outcome, dtype=float)
        n = x.shape[0]
        if z.ndim != 1 or y.ndim != 1 or z.shape[0] != n or y.shape[0] != n:
            raise DataError(
                f"inconsistent lengths: covariates {x.shape[0]}, "
                f"treatment {z.shape}, outcome {y.shape}"
            )
        if n < 2:
            raise DataError(f"need at least 2 units, got {n}")
        if not np.all((z == 0) | (z == 1)):
            raise DataError("non-binary treatment: values must be 0 or 1")
        if not np.all(np.isfinite(x)):
            raise DataError("non-finite value in covariates")
        if not np.all(np.isfinite(y)):
            raise DataError("non-finite value in outcome")
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataError("covariate_names length does not match covariate columns")
        object.__setattr__(self, "covariates", _frozen(x))
        object.__setattr__(self, "treatment", _frozen(z.astype(np.int8)))
        object.__setattr__(self, "outcome", _frozen(y))
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.treatment.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def subset(self, rows) -> "Dataset":
        """Rows ``rows`` (repeats allowed) as a new Dataset."""
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(
            self.covariates[rows], self.treatment[rows], self.outcome[rows], self.covariate_names
        )

    def with_treatment(self, treatment) -> "Dataset":
        return Dataset(self.covariates, treatment, self.outcome, self.covariate_names)

    def swapped(self) -> "Dataset":
        """Same data with treatment labels exchanged (used for ATC)."""
        return self.with_treatment(1 - self.treatment)

    def require_both_groups(self) -> None:
        if self.n_treated == 0:
            raise DataError("no treated units: estimation needs at least one treated unit")
        if self.n_control == 0:
            raise DataError("no control units: estimation needs at least one control unit")


def split_by_treatment(d: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of treated and control units, each in ascending order."""
    treated = np.flatnonzero(d.treatment == 1)
    control = np.flatnonzero(d.treatment == 0)
    return treated, control


def load_manifest(path: str | os.PathLike) -> dict:
    with open(path) as fh:
        manifest = json.load(fh)
    return validate_manifest(manifest)


def validate_manifest(manifest: Mapping) -> dict:
    if not isinstance(manifest, Mapping):
        raise DataError("manifest must be a JSON object")
    if "outcome" not in manifest or "covariates" not in manifest:
        raise DataError('manifest needs "outcome" and "covariates" entries')
    covs = manifest["covariates"]
    if isinstance(covs, str) or not isinstance(covs, Sequence):
        raise DataError('"covariates" must be a list of column names')
    return {
        "treatment": manifest.get("treatment"),
        "outcome": manifest["outcome"],
        "covariates": list(covs),
    }


def _parse_float(cell: str, column: str, line: int) -> float:
    text = cell.strip()
    if text == "":
        raise DataError(f"missing value in column {column!r} at line {line}")
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"non-numeric cell {cell!r} in column {column!r} at line {line}") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite cell {cell!r} in column {column!r} at line {line}")
    return value


_TRUE = {"1", "true", "t", "yes"}
_FALSE = {"0", "false", "f", "no"}


def _parse_treatment(cell: str, column: str, line: int) -> int:
    text = cell.strip().lower()
    if text in _TRUE:
        return 1
    if text in _FALSE:
        return 0
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"non-binary treatment {cell!r} in column {column!r} at line {line}") from None
    if value == 1.0:
        return 1
    if value == 0.0:
        return 0
    raise DataError(f"non-binary treatment {cell!r} in column {column!r} at line {line}")


def load_dataset(path: str | os.PathLike, schema: Mapping) -> Dataset:
    """Read a comma-separated file with a header row.

    ``schema`` maps ``treatment``, ``outcome`` and ``covariates`` to column
    names. ``treatment`` may be null, in which case every row is a control
    (the placebo workflow assigns treatment itself). Row order is preserved.
    """
    schema = validate_manifest(schema)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"empty file: {path}") from None
        rows = [r for r in reader if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"empty file: {path} has a header but no data rows")

    position = {name: k for k, name in enumerate(header)}
    wanted = [schema["outcome"], *schema["covariates"]]
    if schema["treatment"] is not None:
        wanted.append(schema["treatment"])
    for name in wanted:
        if name not in position:
            raise DataError(f"missing column {name!r} in {path}")

    n = len(rows)
    x = np.empty((n, len(schema["covariates"])))
    y = np.empty(n)
    z = np.zeros(n, dtype=np.int8)
    for i, row in enumerate(rows):
        line = i + 2
        if len(row) != len(header):
            raise DataError(f"line {line} has {len(row)} fields, header has {len(header)}")
        y[i] = _parse_float(row[position[schema["outcome"]]], schema["outcome"], line)
        for j, col in enumerate(schema["covariates"]):
            x[i, j] = _parse_float(row[position[col]], col, line)
        if schema["treatment"] is not None:
            z[i] = _parse_treatment(row[position[schema["treatment"]]], schema["treatment"], line)
    return Dataset(x, z, y, tuple(schema["covariates"]))


def write_dataset(
    d: Dataset,
    path: str | os.PathLike,
    treatment: str = "z",
    outcome: str = "y",
) -> dict:
    """Write ``d`` as CSV (floats in shortest round-trip form); return its manifest."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*d.covariate_names, treatment, outcome])
        for i in range(d.n):
            w.writerow([*(repr(float(v)) for v in d.covariates[i]), int(d.treatment[i]), repr(float(d.outcome[i]))])
    return {"treatment": treatment, "outcome": outcome, "covariates": list(d.covariate_names)}
