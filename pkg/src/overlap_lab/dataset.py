"""Observed covariates and treatment indicators, plus CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Dataset", "DatasetError", "read_dataset_csv"]


class DatasetError(ValueError):
    """Malformed input data; the message names the offending row or column."""


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    T: np.ndarray
    columns: tuple | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        T = np.asarray(self.T)
        if X.ndim != 2 or T.ndim != 1 or X.shape[0] != T.shape[0]:
            raise DatasetError("X must be n x p and T must have length n")
        if not np.all(np.isfinite(X)):
            raise DatasetError("covariates contain missing or non-finite values")
        if not np.all((T == 0) | (T == 1)):
            raise DatasetError("treatment must be coded 0/1")
        T = T.astype(int)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "T", T)
        if self.columns is None:
            object.__setattr__(self, "columns", tuple(f"x{k}" for k in range(X.shape[1])))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def both_groups(self):
        return 0 < int(self.T.sum()) < self.n

    def require_both_groups(self):
        if not self.both_groups:
            raise DatasetError("both treatment groups must be non-empty")
        return self

    @property
    def high_dimensional(self):
        """True when there are at least as many covariates as rows."""
        return self.p >= self.n

    def write_csv(self, path, treatment_column="T"):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([treatment_column, *self.columns])
            for t, row in zip(self.T, self.X):
                w.writerow([int(t), *(format(v, ".17g") for v in row)])


def read_dataset_csv(path, treatment_column="T") -> Dataset:
    """Read a headed CSV; every column except the treatment one is a covariate."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if treatment_column not in header:
            raise DatasetError(f"{path}: treatment column {treatment_column!r} not found (columns: {header})")
        t_idx = header.index(treatment_column)
        cov_names = [h for i, h in enumerate(header) if i != t_idx]
        if not cov_names:
            raise DatasetError(f"{path}: no covariate columns")
        X, T = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}: row {line_no} has {len(row)} fields, expected {len(header)}")
            raw_t = row[t_idx].strip()
            if raw_t not in ("0", "1", "0.0", "1.0"):
                raise DatasetError(
                    f"{path}: row {line_no}, column {treatment_column!r}: treatment must be 0 or 1, got {raw_t!r}"
                )
            T.append(int(float(raw_t)))
            values = []
            for i, cell in enumerate(row):
                if i == t_idx:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DatasetError(f"{path}: row {line_no}, column {header[i]!r}: cannot parse {cell!r}") from None
                if not math.isfinite(v):
                    raise DatasetError(f"{path}: row {line_no}, column {header[i]!r}: non-finite value {cell!r}")
                values.append(v)
            X.append(values)
    if not T:
        raise DatasetError(f"{path}: no data rows")
    return Dataset(np.array(X), np.array(T), tuple(cov_names))
