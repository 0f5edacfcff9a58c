"""End-to-end selection: cross-fitted probabilities followed by efp scoring."""

from __future__ import annotations

from dataclasses import dataclass, field

from .cate import CateSpec
from .core import Dataset, RngSpec, as_rngspec, standardize_dataset
from .ipss import DEFAULT_Q_CAP, EfpReport, efp_report
from .stabsel import (LambdaGrid, ProbabilityCurves, SelectionEvents, SelectorParams,
                      default_subsample_size, estimate_oracle_probabilities,
                      estimate_selection_probabilities)


@dataclass(frozen=True)
class SelectionConfig:
    selector: str = "lasso"
    cate: CateSpec = field(default_factory=CateSpec)
    B: int = 100
    m: int | None = None
    m_rule: str = "half"
    delta: float = 1.0
    q_cap: float | None = DEFAULT_Q_CAP
    grid_size: int = 50
    selector_params: SelectorParams = field(default_factory=SelectorParams)

    def subsample_size(self, n: int) -> int:
        return self.m if self.m is not None else default_subsample_size(n, self.m_rule)


@dataclass(frozen=True)
class SelectionResult:
    report: EfpReport
    curves: ProbabilityCurves
    events: SelectionEvents


def run_selection(data: Dataset, config: SelectionConfig = SelectionConfig(),
                  rng: RngSpec | int | None = None, n_jobs: int = 1, standardize: bool = False,
                  grid: LambdaGrid | None = None) -> SelectionResult:
    """Causal stability selection on ``data`` with efp scores for every feature."""
    if standardize:
        data = standardize_dataset(data)
    curves, events = estimate_selection_probabilities(
        data, config.selector, config.cate, grid, config.B, config.subsample_size(data.n),
        as_rngspec(rng), config.selector_params, config.grid_size, n_jobs)
    report = efp_report(curves, events, config.delta, config.q_cap, data.feature_names)
    return SelectionResult(report, curves, events)


def run_oracle_selection(X, tau, config: SelectionConfig = SelectionConfig(),
                         rng: RngSpec | int | None = None, n_jobs: int = 1, z=None,
                         grid: LambdaGrid | None = None, feature_names=()) -> SelectionResult:
    """Same scoring with a known CATE (or any fixed response) in place of fitted ones."""
    n = len(X)
    curves, events = estimate_oracle_probabilities(
        X, tau, config.selector, grid, config.B, config.subsample_size(n), as_rngspec(rng),
        config.selector_params, config.grid_size, n_jobs, z)
    report = efp_report(curves, events, config.delta, config.q_cap, feature_names)
    return SelectionResult(report, curves, events)
