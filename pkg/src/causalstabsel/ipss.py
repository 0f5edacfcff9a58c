"""Integrated path scoring: f-transform, lambda measure, integral scores,
the expected-false-positive bound and efp-based selection rules."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import SelectionSet
from .stabsel import LambdaGrid, ProbabilityCurves, SelectionEvents

DEFAULT_Q_CAP = 0.5


def f_transform(x):
    """(2x - 1)^3 on [1/2, 1], zero below."""
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
        raise ValueError("f_transform input must lie in [0, 1]")
    out = np.where(x >= 0.5, (2 * x - 1) ** 3, 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MeasureWeights:
    weights: np.ndarray
    delta: float


def _values(grid) -> np.ndarray:
    return grid.values if isinstance(grid, LambdaGrid) else np.asarray(grid, dtype=float)


def cell_widths(values) -> np.ndarray:
    """Riemann cell width per grid point: half the gap to each neighbour inside,
    the full one-sided gap at the two ends."""
    v = np.asarray(values, dtype=float)
    gaps = np.abs(np.diff(v))
    widths = np.empty_like(v)
    widths[0], widths[-1] = gaps[0], gaps[-1]
    widths[1:-1] = 0.5 * (gaps[:-1] + gaps[1:])
    return widths


def measure_weights(grid, delta: float = 1.0) -> MeasureWeights:
    """Normalized Riemann weights for the density lambda^(-delta)."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    v = _values(grid)
    # scale by the largest lambda first so big deltas cannot overflow
    w = (v / v.max()) ** (-delta) * cell_widths(v)
    return MeasureWeights(w / w.sum(), float(delta))


def integral_scores(curves, weights) -> np.ndarray:
    pi = curves.pi_hat if isinstance(curves, ProbabilityCurves) else np.asarray(curves, dtype=float)
    w = weights.weights if isinstance(weights, MeasureWeights) else np.asarray(weights, dtype=float)
    if pi.ndim != 2 or pi.shape[1] != w.shape[0]:
        raise ValueError(f"curves have {pi.shape[-1]} grid points, weights {w.shape[0]}")
    return np.clip(f_transform(pi) @ w, 0.0, 1.0)


def qhat_curve(events) -> np.ndarray:
    ev = events.events if isinstance(events, SelectionEvents) else np.asarray(events)
    return ev.sum(axis=2).mean(axis=0)


def efp_bound_constant(q_hat, weights, B: int, p: int) -> float:
    """Weighted integral of the false-positive bound integrand at gamma = 1."""
    if B < 2:
        raise ValueError("the bound needs B >= 2")
    q = np.asarray(q_hat, dtype=float)
    w = weights.weights if isinstance(weights, MeasureWeights) else np.asarray(weights, dtype=float)
    if np.any(q < 0) or np.any(q > p):
        raise ValueError("q_hat entries must lie in [0, p]")
    integrand = (q**2 / (B**2 * p)
                 + 3 * (B - 1) * q**4 / (B**2 * p**3)
                 + (B - 1) * (B - 2) * q**6 / (B**2 * p**5))
    return float(integrand @ w)


def efp_scores(I, C: float, p: int) -> np.ndarray:
    I = np.asarray(I, dtype=float)
    out = np.full(I.shape, float(p))
    pos = I > 0
    out[pos] = np.minimum(C / I[pos], p)
    return out


def select_at_target(efp, t: float) -> SelectionSet:
    return SelectionSet.from_mask(np.asarray(efp) <= t)


def select_fdr(efp, alpha: float) -> SelectionSet:
    """Largest efp threshold t with t / |{efp <= t}| <= alpha."""
    efp = np.asarray(efp, dtype=float)
    best = None
    for t in np.unique(np.concatenate([[0.0], efp])):
        k = int(np.sum(efp <= t))
        if k and t / k <= alpha:
            best = t
    if best is None:
        return SelectionSet()
    return select_at_target(efp, best)


def ss_max_select(curves, gamma: float) -> SelectionSet:
    pi = curves.pi_hat if isinstance(curves, ProbabilityCurves) else np.asarray(curves)
    return SelectionSet.from_mask(pi.max(axis=1) >= gamma)


def truncate_by_qhat(q_hat, p: int, q_cap: float | None = DEFAULT_Q_CAP) -> np.ndarray:
    """Boolean mask of grid points kept for integration.

    Walking from the largest lambda down, the first point where q_hat exceeds
    q_cap * p and everything after it are dropped. If that drops the whole
    grid, the points with the smallest q_hat are kept.
    """
    q = np.asarray(q_hat, dtype=float)
    keep = np.ones(q.size, dtype=bool)
    if q_cap is None:
        return keep
    over = np.flatnonzero(q > q_cap * p)
    if over.size:
        keep[over[0]:] = False
    if not keep.any():
        keep = q == q.min()
    return keep


@dataclass(frozen=True)
class EfpReport:
    integral_scores: np.ndarray
    bound_constant: float
    efp: np.ndarray
    q_hat: np.ndarray
    weights: np.ndarray  # after truncation, zero on dropped points
    feature_names: tuple[str, ...] = ()

    def select_at_target(self, t: float) -> SelectionSet:
        return select_at_target(self.efp, t)

    def select_fdr(self, alpha: float) -> SelectionSet:
        return select_fdr(self.efp, alpha)

    def to_csv(self, path, selected: SelectionSet | None = None) -> None:
        """Features ranked by efp; ties keep column order."""
        names = self.feature_names or tuple(f"x{j}" for j in range(self.efp.size))
        order = np.argsort(self.efp, kind="stable")
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            header = ["name", "integral_score", "efp"] + (["selected"] if selected is not None else [])
            w.writerow(header)
            for j in order:
                row = [names[j], repr(float(self.integral_scores[j])), repr(float(self.efp[j]))]
                if selected is not None:
                    row.append(int(j in selected))
                w.writerow(row)


def efp_report(curves: ProbabilityCurves, events: SelectionEvents, delta: float = 1.0,
               q_cap: float | None = DEFAULT_Q_CAP, feature_names=()) -> EfpReport:
    """Scores, bound constant and efp values from one set of selection runs."""
    p = curves.pi_hat.shape[0]
    q = qhat_curve(events)
    mw = measure_weights(curves.grid, delta).weights
    keep = truncate_by_qhat(q, p, q_cap)
    w = np.where(keep, mw, 0.0)
    w = w / w.sum()
    I = integral_scores(curves, w)
    C = efp_bound_constant(q, w, max(curves.B, 2), p)
    return EfpReport(I, C, efp_scores(I, C, p), q, w, tuple(feature_names))
