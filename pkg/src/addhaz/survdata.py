"""Right-censored survival data with time-fixed covariates."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataValidationError(ValueError):
    """Raised when survival data violates a dataset invariant."""


class DataParseError(ValueError):
    """Raised when a CSV cell cannot be parsed as a number."""


@dataclass(frozen=True)
class SurvivalDataset:
    """Observed times, event indicators and an n x p covariate matrix.

    ``status[i] == 1`` marks an observed failure. Arrays are copied and made
    read-only on construction, so a dataset can be shared freely.
    """

    times: np.ndarray
    status: np.ndarray
    covariates: np.ndarray
    feature_names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        status_raw = np.asarray(self.status)
        covariates = np.array(self.covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates.reshape(-1, 1)
        if times.ndim != 1:
            raise DataValidationError("times must be one-dimensional")
        n = times.shape[0]
        if status_raw.shape != (n,):
            raise DataValidationError(f"status has shape {status_raw.shape}, expected ({n},)")
        if covariates.ndim != 2 or covariates.shape[0] != n:
            raise DataValidationError(
                f"covariates have shape {covariates.shape}, expected ({n}, p)")
        if n < 2:
            raise DataValidationError("need at least 2 observations")
        bad = np.flatnonzero(~np.isfinite(times) | (times < 0))
        if bad.size:
            raise DataValidationError(
                f"row {bad[0] + 1}: time must be finite and nonnegative, got {times[bad[0]]}")
        status_f = status_raw.astype(float)
        bad = np.flatnonzero((status_f != 0) & (status_f != 1))
        if bad.size:
            raise DataValidationError(f"row {bad[0] + 1}: status must be 0 or 1, got {status_raw[bad[0]]}")
        bad_rows = np.flatnonzero(~np.isfinite(covariates).all(axis=1))
        if bad_rows.size:
            raise DataValidationError(f"row {bad_rows[0] + 1}: non-finite covariate value")
        status = status_f.astype(np.int8)
        if not status.any():
            raise DataValidationError("dataset contains no observed failures")
        names = self.feature_names
        if names is not None:
            names = tuple(str(s) for s in names)
            if len(names) != covariates.shape[1]:
                raise DataValidationError(
                    f"{len(names)} feature names for {covariates.shape[1]} covariates")
        for arr in (times, status, covariates):
            arr.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.times.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.status.sum())

    def subset(self, rows) -> "SurvivalDataset":
        """Dataset restricted to ``rows`` (index array or boolean mask)."""
        rows = np.asarray(rows)
        return SurvivalDataset(self.times[rows], self.status[rows],
                               self.covariates[rows], self.feature_names)


def _parse_float(cell, row, col):
    try:
        return float(cell)
    except ValueError:
        raise DataParseError(f"row {row}, column {col}: cannot parse {cell!r} as a number") from None


def load_csv(path, has_header=False) -> SurvivalDataset:
    """Read a ``time,status,z1,...,zp`` CSV file.

    Error messages number data rows and columns from 1 (the header is not counted).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    names = None
    if has_header:
        if not rows:
            raise DataValidationError(f"{path}: empty file")
        header, rows = rows[0], rows[1:]
        names = [h.strip() for h in header[2:]]
    if not rows:
        raise DataValidationError(f"{path}: no data rows")
    width = len(rows[0])
    if width < 3:
        raise DataValidationError("need at least time, status and one covariate column")
    if names is not None and len(names) != width - 2:
        raise DataValidationError(f"header has {len(names) + 2} columns, data has {width}")
    times, status, covs = [], [], []
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DataValidationError(f"row {i + 1}: expected {width} columns, found {len(r)}")
        vals = [_parse_float(c.strip(), i + 1, j + 1) for j, c in enumerate(r)]
        if vals[0] < 0 or not np.isfinite(vals[0]):
            raise DataValidationError(f"row {i + 1}: time must be finite and nonnegative, got {vals[0]}")
        if vals[1] not in (0.0, 1.0):
            raise DataValidationError(f"row {i + 1}: status must be 0 or 1, got {r[1].strip()}")
        times.append(vals[0])
        status.append(vals[1])
        covs.append(vals[2:])
    return SurvivalDataset(np.array(times), np.array(status), np.array(covs), names)


def write_csv(ds: SurvivalDataset, path, header=True):
    """Write ``ds`` in the format read by :func:`load_csv`.

    Values use ``repr`` so that a round trip is bit-exact.
    """
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            names = ds.feature_names or tuple(f"z{j + 1}" for j in range(ds.p))
            w.writerow(["time", "status", *names])
        for t, s, z in zip(ds.times, ds.status, ds.covariates):
            w.writerow([repr(float(t)), int(s), *(repr(float(v)) for v in z)])


def train_test_split(ds: SurvivalDataset, train_fraction: float, seed: int):
    """Random disjoint split into training and test sets.

    The training set receives ``round(train_fraction * n)`` rows; rows keep
    their original relative order within each part.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n_train = int(round(train_fraction * ds.n))
    if not 1 <= n_train < ds.n:
        raise ValueError(f"split of n={ds.n} at {train_fraction} leaves an empty part")
    perm = np.random.default_rng(seed).permutation(ds.n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    if not ds.status[train_idx].any():
        raise DataValidationError("training split contains no observed failures")
    # a test part without events is still a valid hold-out sample for scoring,
    # but SurvivalDataset requires one; surface that as the same error
    if not ds.status[test_idx].any() or test_idx.size < 2:
        raise DataValidationError("test split is degenerate (fewer than 2 rows or no failures)")
    return ds.subset(train_idx), ds.subset(test_idx)
