"""Complementary-pairs subsampling with cross-fitted CATE responses.

Each subsample A gets a CATE model trained on its complement, the model's
predictions on A become the response, and a base selector is run on
(X_A, response) over one lambda grid shared by every subsample.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from joblib import Parallel, delayed

from . import learners
from .core import Dataset, RngSpec, as_generator, as_rngspec

KINDS = ("lasso", "gbt")
_ALIASES = {"lasso_path": "lasso", "importance_threshold": "gbt", "importance": "gbt"}
PREVIEW_FITS = 3
HEADROOM = 1.05
_MAGIC = b"CSSE"
_VERSION = 1


class SelectionError(RuntimeError):
    pass


def selector_kind(kind: str) -> str:
    kind = _ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise ValueError(f"unknown selector {kind!r}; choose from {KINDS}")
    return kind


@dataclass(frozen=True)
class SelectorParams:
    """Base-selector settings. Lasso standardizes the response per subsample."""

    standardize_response: bool = True
    lasso_tol: float = 1e-7
    gbt_rounds: int = 100
    gbt_depth: int = 3
    gbt_learning_rate: float = 0.1
    gbt_min_leaf: int = 5


@dataclass(frozen=True)
class LambdaGrid:
    values: np.ndarray
    selector_kind: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 2 or np.any(v <= 0) or np.any(np.diff(v) >= 0):
            raise ValueError("grid must hold >= 2 positive, strictly decreasing values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "selector_kind", selector_kind(self.selector_kind))

    def __len__(self):
        return self.values.size

    @classmethod
    def geometric(cls, lam_max: float, size: int, kind: str, ratio: float = 100.0) -> "LambdaGrid":
        return cls(lam_max * np.geomspace(1.0, 1.0 / ratio, size), kind)


@dataclass(frozen=True)
class SelectionEvents:
    events: np.ndarray  # bool (2B, G, p)
    subsample_size: int
    pairs: tuple  # B pairs of sorted index arrays
    grid: LambdaGrid | None = None
    train_sets: tuple | None = None  # per run; recorded for the cross-fit check

    @property
    def B(self) -> int:
        return self.events.shape[0] // 2

    def save(self, path) -> None:
        runs, G, p = self.events.shape
        B, m = runs // 2, self.subsample_size
        with Path(path).open("wb") as fh:
            fh.write(_MAGIC + struct.pack("<IQQQQ", _VERSION, B, G, p, m))
            fh.write(np.packbits(self.events.ravel()).tobytes())
            fh.write(np.asarray(self.pairs, dtype="<i4").reshape(B, 2, m).tobytes())
            grid = self.grid.values if self.grid is not None else np.zeros(G)
            kind = self.grid.selector_kind.encode() if self.grid is not None else b""
            fh.write(np.asarray(grid, dtype="<f8").tobytes())
            fh.write(struct.pack("<I", len(kind)) + kind)

    @classmethod
    def load(cls, path) -> "SelectionEvents":
        raw = Path(path).read_bytes()
        if raw[:4] != _MAGIC:
            raise ValueError(f"{path}: not a selection-events file")
        version, B, G, p, m = struct.unpack_from("<IQQQQ", raw, 4)
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        off = 4 + struct.calcsize("<IQQQQ")
        nbits = 2 * B * G * p
        nbytes = (nbits + 7) // 8
        bits = np.unpackbits(np.frombuffer(raw, np.uint8, nbytes, off), count=nbits)
        off += nbytes
        pairs = np.frombuffer(raw, "<i4", 2 * B * m, off).reshape(B, 2, m).astype(np.int64)
        off += 4 * 2 * B * m
        values = np.frombuffer(raw, "<f8", G, off).copy()
        off += 8 * G
        (klen,) = struct.unpack_from("<I", raw, off)
        kind = raw[off + 4: off + 4 + klen].decode()
        grid = LambdaGrid(values, kind) if kind else None
        return cls(bits.astype(bool).reshape(2 * B, G, p), int(m),
                   tuple((a, b) for a, b in pairs), grid)


@dataclass(frozen=True)
class ProbabilityCurves:
    pi_hat: np.ndarray  # (p, G)
    mode: str
    grid: LambdaGrid
    B: int


def curves_from_events(events: SelectionEvents, mode: str = "crossfit") -> ProbabilityCurves:
    pi = events.events.mean(axis=0).T
    return ProbabilityCurves(np.ascontiguousarray(pi), mode, events.grid, events.B)


# ---------------------------------------------------------------- subsampling


def draw_subsample_pair(n: int, m: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Two disjoint uniformly random size-m subsets of range(n)."""
    if not 1 <= m <= n // 2:
        raise ValueError(f"subsample size m={m} must satisfy 1 <= m <= floor(n/2) = {n // 2}")
    perm = as_generator(rng).permutation(n)
    return np.sort(perm[:m]), np.sort(perm[m:2 * m])


def _complement_has_both_arms(z, rows):
    keep = np.ones(z.shape[0], dtype=bool)
    keep[rows] = False
    treated = int(z[keep].sum())
    return 0 < treated < int(keep.sum())


def draw_pairs(n: int, B: int, m: int, rng: RngSpec, z=None, max_attempts: int = 10):
    """B complementary pairs; with ``z`` given, redraws pairs whose complements miss an arm."""
    pairs = []
    for b in range(B):
        stream = rng.child(b)
        for attempt in range(max_attempts):
            a1, a2 = draw_subsample_pair(n, m, stream.child(1000 + attempt))
            if z is None or (_complement_has_both_arms(z, a1) and _complement_has_both_arms(z, a2)):
                break
        else:
            raise SelectionError(f"pair {b}: complement lacked a treatment arm in {max_attempts} draws")
        pairs.append((a1, a2))
    return tuple(pairs)


def default_subsample_size(n: int, rule: str = "half") -> int:
    """``half`` gives floor(n/2), ``quarter`` floor(n/4), ``sqrt`` floor(sqrt(n)/2)."""
    if rule == "half":
        return n // 2
    if rule == "quarter":
        return n // 4
    if rule == "sqrt":
        return max(1, int(np.sqrt(n)) // 2)
    raise ValueError(f"unknown subsample rule {rule!r}")


# ---------------------------------------------------------------- base selectors


def _standardize_subsample(X_A, resp, standardize_response):
    X_A = np.asarray(X_A, dtype=float)
    Xc = X_A - X_A.mean(axis=0)
    sd = np.sqrt(np.mean(Xc**2, axis=0))
    sd[sd <= 1e-12] = 1.0  # constant columns stay all-zero and never enter
    r = np.asarray(resp, dtype=float) - np.mean(resp)
    rs = np.sqrt(np.mean(r**2))
    if rs <= 1e-12 * max(1.0, float(np.max(np.abs(resp)))):
        return Xc / sd, None
    return Xc / sd, (r / rs if standardize_response else r)


def importance_scores(X_A, resp, params: SelectorParams = SelectorParams(), rng=None) -> np.ndarray:
    ens = learners.gbt_fit(X_A, resp, params.gbt_rounds, params.gbt_depth,
                           params.gbt_learning_rate, params.gbt_min_leaf, rng)
    return learners.gbt_importance(ens)


def selector_lambda_max(kind: str, X_A, resp, params: SelectorParams = SelectorParams(), rng=None) -> float:
    """Smallest lambda at which the selector picks nothing on this subsample."""
    kind = selector_kind(kind)
    if kind == "lasso":
        Xs, r = _standardize_subsample(X_A, resp, params.standardize_response)
        return 0.0 if r is None else learners.lasso_lambda_max(Xs, r)
    return float(np.max(importance_scores(X_A, resp, params, rng)))


def select_over_grid(kind: str, X_A, resp, lambdas, params: SelectorParams = SelectorParams(),
                     rng=None) -> np.ndarray:
    """Boolean (G, p) matrix: row g is the selected set at lambdas[g]."""
    kind = selector_kind(kind)
    lambdas = np.asarray(lambdas, dtype=float)
    p = np.asarray(X_A).shape[1]
    if kind == "lasso":
        Xs, r = _standardize_subsample(X_A, resp, params.standardize_response)
        if r is None:
            return np.zeros((lambdas.size, p), dtype=bool)
        path = learners.lasso_path(Xs, r, lambdas, tol=params.lasso_tol, check_standardized=False)
        return path.coefficients != 0
    phi = importance_scores(X_A, resp, params, rng)
    return phi[None, :] > lambdas[:, None]


def build_lambda_grid(kind: str, previews, size: int = 50, params: SelectorParams = SelectorParams(),
                      rng: RngSpec | None = None, ratio: float = 100.0) -> LambdaGrid:
    """Geometric grid from 5% above the largest preview lambda_max down by ``ratio``.

    ``previews`` is a sequence of (X_A, response) pairs.
    """
    kind = selector_kind(kind)
    previews = list(previews)
    if not previews:
        raise ValueError("need at least one preview fit")
    rng = as_rngspec(rng)
    lam = max(selector_lambda_max(kind, X, r, params, rng.child(i)) for i, (X, r) in enumerate(previews))
    if not lam > 0:
        raise SelectionError("all-zero preview response: nothing can ever be selected")
    return LambdaGrid.geometric(HEADROOM * lam, size, kind, ratio)


# ---------------------------------------------------------------- Algorithm driver


@dataclass
class _Run:
    rows: np.ndarray
    train: np.ndarray | None
    response: np.ndarray


def _run_map(fn, items, n_jobs):
    if n_jobs == 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    return Parallel(n_jobs=n_jobs, prefer="threads")(delayed(fn)(*it) for it in items)


def _events_from_runs(X, runs, kind, grid, params, rng, n_jobs):
    def one(i, run):
        return select_over_grid(kind, X[run.rows], run.response, grid.values, params, rng.child(i).child(7))

    out = _run_map(one, list(enumerate(runs)), n_jobs)
    return np.stack(out).astype(bool)


def _ensure_grid(grid, kind, X, runs, grid_size, params, rng):
    if grid is not None:
        if grid.selector_kind != kind:
            raise ValueError(f"grid built for {grid.selector_kind}, selector is {kind}")
        return grid
    previews = [(X[r.rows], r.response) for r in runs[:PREVIEW_FITS]]
    return build_lambda_grid(kind, previews, grid_size, params, rng.child(999_999))


def _check_args(n, B, m):
    if B < 1:
        raise ValueError("B must be >= 1")
    if not 1 <= m <= n // 2:
        raise ValueError(f"subsample size m={m} must satisfy 1 <= m <= floor(n/2) = {n // 2}")


def estimate_selection_probabilities(data: Dataset, kind: str, cate_spec, grid: LambdaGrid | None = None,
                                     B: int = 100, m: int | None = None, rng: RngSpec | None = None,
                                     params: SelectorParams = SelectorParams(), grid_size: int = 50,
                                     n_jobs: int = 1) -> tuple[ProbabilityCurves, SelectionEvents]:
    """Cross-fitted selection probabilities.

    For each of the 2B subsamples A the CATE estimator is fit on the rows
    outside A and its predictions on A are the selector's response. When
    ``grid`` is None it is built from the first three subsample responses.
    """
    kind = selector_kind(kind)
    rng = as_rngspec(rng)
    n = data.n
    m = n // 2 if m is None else int(m)
    _check_args(n, B, m)
    pairs = draw_pairs(n, B, m, rng, data.z)
    everything = np.arange(n)

    def fit_one(b, s):
        rows = pairs[b][s]
        train = np.setdiff1d(everything, rows, assume_unique=True)
        if np.intersect1d(train, rows).size:
            raise AssertionError("training rows overlap the selection subsample")
        model = cate_spec.fit(data.subset(train), rng.child(b).child(2 + s))
        tau_hat = np.asarray(model.predict(data.X[rows]), dtype=float)
        if not np.all(np.isfinite(tau_hat)):
            raise SelectionError(f"non-finite CATE prediction in subsample {2 * b + s}")
        return _Run(rows, train, tau_hat)

    runs = _run_map(fit_one, [(b, s) for b in range(B) for s in (0, 1)], n_jobs)
    grid = _ensure_grid(grid, kind, data.X, runs, grid_size, params, rng)
    events = _events_from_runs(data.X, runs, kind, grid, params, rng, n_jobs)
    ev = SelectionEvents(events, m, pairs, grid, tuple(r.train for r in runs))
    return curves_from_events(ev, "crossfit"), ev


def estimate_oracle_probabilities(X, tau_true: Callable | np.ndarray, kind: str,
                                  grid: LambdaGrid | None = None, B: int = 100, m: int | None = None,
                                  rng: RngSpec | None = None, params: SelectorParams = SelectorParams(),
                                  grid_size: int = 50, n_jobs: int = 1, z=None
                                  ) -> tuple[ProbabilityCurves, SelectionEvents]:
    """Selection probabilities with the true CATE as the response (no fitting).

    Passing the treatment vector ``z`` reproduces the cross-fitted pair
    draws exactly, which makes the two estimators directly comparable.
    """
    kind = selector_kind(kind)
    rng = as_rngspec(rng)
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    tau = np.asarray(tau_true(X) if callable(tau_true) else tau_true, dtype=float).ravel()
    if tau.shape[0] != n:
        raise ValueError("tau_true must give one value per row")
    m = n // 2 if m is None else int(m)
    _check_args(n, B, m)
    pairs = draw_pairs(n, B, m, rng, None if z is None else np.asarray(z))
    runs = [_Run(pairs[b][s], None, tau[pairs[b][s]]) for b in range(B) for s in (0, 1)]
    grid = _ensure_grid(grid, kind, X, runs, grid_size, params, rng)
    events = _events_from_runs(X, runs, kind, grid, params, rng, n_jobs)
    ev = SelectionEvents(events, m, pairs, grid)
    return curves_from_events(ev, "oracle"), ev
