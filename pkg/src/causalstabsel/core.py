"""Shared data model, CSV ingestion, standardization, metrics and RNG streams."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

# stream ids inside one trial are trial * TRIAL_STRIDE + local index
TRIAL_STRIDE = 10**6
_MASK64 = (1 << 64) - 1


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class RngSpec:
    """A (master_seed, stream_id) pair naming one reproducible random stream.

    Streams are backed by the counter-based Philox generator keyed through a
    ``SeedSequence``; two specs with different ``stream_id`` give independent
    streams, and the same spec always gives the same bits.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.master_seed <= _MASK64 and 0 <= self.stream_id <= _MASK64):
            raise ValueError("master_seed and stream_id must be 64-bit unsigned integers")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(seq))

    def child(self, key: int) -> "RngSpec":
        """Derive a sub-stream; deterministic in (stream_id, key)."""
        mixed = np.random.SeedSequence([self.stream_id, int(key) & _MASK64]).generate_state(
            1, np.uint64
        )[0]
        return RngSpec(self.master_seed, int(mixed))

    @classmethod
    def for_trial(cls, master_seed: int, trial: int, index: int = 0) -> "RngSpec":
        if not 0 <= index < TRIAL_STRIDE:
            raise ValueError("local stream index out of range")
        return cls(master_seed, trial * TRIAL_STRIDE + index)


def as_generator(rng: RngSpec | np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSpec):
        return rng.generator()
    if rng is None:
        rng = 0
    return RngSpec(int(rng)).generator()


def as_rngspec(rng: RngSpec | int | None) -> RngSpec:
    if isinstance(rng, RngSpec):
        return rng
    return RngSpec(0 if rng is None else int(rng))


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    z: np.ndarray
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        z = np.asarray(self.z)
        if X.ndim != 2:
            raise DataError("X must be a 2-d matrix")
        n, p = X.shape
        if y.shape[0] != n or z.shape[0] != n:
            raise DataError(f"inconsistent row counts: X has {n}, y {y.shape[0]}, z {z.shape[0]}")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise DataError("non-finite entries in X or y")
        if not np.all((z == 0) | (z == 1)):
            raise DataError("treatment not binary")
        z = z.astype(np.int8)
        n_treated = int(z.sum())
        if n_treated == 0 or n_treated == n:
            raise DataError("need at least one treated and one control unit")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(p))
        if len(names) != p:
            raise DataError(f"{len(names)} feature names for {p} columns")
        for arr in (X, y, z):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.y[rows], self.z[rows], self.feature_names)


@dataclass(frozen=True)
class SelectionSet:
    """Sorted, duplicate-free feature indices."""

    indices: tuple[int, ...] = ()

    def __post_init__(self):
        idx = tuple(sorted({int(i) for i in self.indices}))
        if idx and idx[0] < 0:
            raise ValueError("negative feature index")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_mask(cls, mask) -> "SelectionSet":
        return cls(tuple(np.flatnonzero(np.asarray(mask, dtype=bool))))

    def check(self, p: int) -> "SelectionSet":
        if self.indices and self.indices[-1] >= p:
            raise ValueError(f"feature index {self.indices[-1]} out of range for p={p}")
        return self

    def mask(self, p: int) -> np.ndarray:
        out = np.zeros(p, dtype=bool)
        out[list(self.check(p).indices)] = True
        return out

    def __iter__(self):
        return iter(self.indices)

    def __len__(self):
        return len(self.indices)

    def __contains__(self, j):
        return int(j) in self.indices

    def __le__(self, other: "SelectionSet") -> bool:
        return set(self.indices) <= set(other.indices)


@dataclass(frozen=True)
class Metrics:
    tpr: float
    fdr: float
    n_selected: int
    n_true_positives: int


def tpr_fdr(selected: Iterable[int], truth: Iterable[int], p: int) -> Metrics:
    sel = SelectionSet(tuple(selected)).check(p)
    tru = SelectionSet(tuple(truth)).check(p)
    tp = len(set(sel.indices) & set(tru.indices))
    fp = len(sel) - tp
    tpr = tp / len(tru) if len(tru) else 0.0
    return Metrics(tpr=tpr, fdr=fp / max(len(sel), 1), n_selected=len(sel), n_true_positives=tp)


def standardize_columns(X, names: Sequence[str] | None = None):
    """Center columns and scale to unit population variance.

    Returns ``(Z, means, scales)`` with ``X == Z * scales + means``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataError("expected a 2-d matrix")
    means = X.mean(axis=0)
    centered = X - means
    scales = np.sqrt(np.mean(centered**2, axis=0))
    bad = np.flatnonzero(~(scales > 1e-12 * np.maximum(1.0, np.abs(means))))
    if bad.size:
        j = int(bad[0])
        label = names[j] if names is not None else str(j)
        raise DataError(f"column {label} has zero variance and cannot be standardized")
    return centered / scales, means, scales


def standardize_dataset(data: Dataset) -> Dataset:
    Xs, _, _ = standardize_columns(data.X, data.feature_names)
    return Dataset(Xs, data.y, data.z, data.feature_names)


def balanced_folds(n: int, k: int, gen: np.random.Generator) -> np.ndarray:
    """Random fold labels in {0..k-1} whose sizes differ by at most one."""
    if k < 2 or k > n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[gen.permutation(n)] = np.arange(n) % k
    return fold_of


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"non-numeric value {cell!r} in column {col!r}, row {row}") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite value {cell!r} in column {col!r}, row {row}")
    return value


def load_csv(path, outcome_col: str, treatment_col: str) -> Dataset:
    """Read a header-row CSV; every column other than outcome/treatment is a feature."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    for col in (outcome_col, treatment_col):
        if col not in header:
            raise DataError(f"missing column {col!r}")
    if len(set(header)) != len(header):
        raise DataError("duplicate column names")
    yi, zi = header.index(outcome_col), header.index(treatment_col)
    feat = [j for j in range(len(header)) if j not in (yi, zi)]
    if not feat:
        raise DataError("no feature columns: p = 0")
    if len(rows) < 4:
        raise DataError(f"need n >= 4 rows, got {len(rows)}")
    values = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"row {i} has {len(row)} cells, header has {len(header)}")
        for j, cell in enumerate(row):
            if not cell.strip():
                raise DataError(f"missing value in column {header[j]!r}, row {i}")
            values[i - 2, j] = _parse_float(cell, i, header[j])
    z = values[:, zi]
    if not np.all((z == 0) | (z == 1)):
        raise DataError("treatment not binary")
    return Dataset(values[:, feat], values[:, yi], z.astype(np.int8),
                   tuple(header[j] for j in feat))


def write_csv(data: Dataset, path, outcome_col: str = "y", treatment_col: str = "z") -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(data.feature_names) + [outcome_col, treatment_col])
        for i in range(data.n):
            w.writerow([repr(float(v)) for v in data.X[i]] + [repr(float(data.y[i])), int(data.z[i])])
