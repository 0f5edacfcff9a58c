"""Simulation experiments, comparator methods and Monte Carlo bound checks."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from . import learners
from .cate import CateSpec, TrueCate, kfold_split
from .core import Dataset, RngSpec, SelectionSet, as_rngspec, tpr_fdr
from .ipss import select_at_target
from .pipeline import SelectionConfig, run_oracle_selection, run_selection
from .simgen import SimConfig, generate
from .stabsel import (LambdaGrid, SelectorParams, build_lambda_grid, estimate_oracle_probabilities,
                      estimate_selection_probabilities)

log = logging.getLogger(__name__)

METHODS = ("causalstabsel", "oracle_ipss", "naive_ipss", "lasso_cv", "bh", "topk_gbt")
EFP_METHODS = ("causalstabsel", "oracle_ipss", "naive_ipss")
FAILURE_LIMIT = 0.2
RESULT_COLUMNS = ("method", "alpha", "mean_tpr", "se_tpr", "mean_fdr", "se_fdr", "mean_selected", "trials")


# ---------------------------------------------------------------- comparators


def bh_select(pvalues, alpha: float) -> SelectionSet:
    """Benjamini-Hochberg step-up: reject the k smallest with p_(k) <= k*alpha/m."""
    p = np.asarray(pvalues, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ok = np.flatnonzero(p[order] <= alpha * np.arange(1, m + 1) / m)
    if ok.size == 0:
        return SelectionSet()
    return SelectionSet(tuple(order[: ok[-1] + 1]))


def ols_pvalues(X, y, univariate: bool = False) -> np.ndarray:
    """Two-sided t-test p-values for each OLS slope (intercept included)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if univariate:
        out = np.empty(p)
        for j in range(p):
            r = stats.linregress(X[:, j], y)
            out[j] = r.pvalue
        return out
    if n <= p + 1:
        raise ValueError(f"multivariate OLS p-values need n > p + 1 (n={n}, p={p})")
    Xa = np.hstack([np.ones((n, 1)), X])
    coef, _, rank, _ = np.linalg.lstsq(Xa, y, rcond=None)
    if rank < p + 1:
        raise np.linalg.LinAlgError("rank-deficient design for OLS p-values")
    resid = y - Xa @ coef
    dof = n - p - 1
    sigma2 = resid @ resid / dof
    cov = sigma2 * np.linalg.inv(Xa.T @ Xa)
    tstat = coef[1:] / np.sqrt(np.diag(cov)[1:])
    return 2 * stats.t.sf(np.abs(tstat), dof)


def topk_importance_select(importance, k: int) -> SelectionSet:
    """The k largest scores; ties go to the lower index."""
    imp = np.asarray(importance, dtype=float)
    if not 0 <= k <= imp.size:
        raise ValueError(f"k={k} outside [0, {imp.size}]")
    order = np.lexsort((np.arange(imp.size), -imp))
    return SelectionSet(tuple(order[:k]))


@dataclass(frozen=True)
class PseudoOutcomes:
    X: np.ndarray
    values: np.ndarray
    fold_of: np.ndarray


def crossfit_pseudo_dataset(data: Dataset, k: int, cate_spec, rng: RngSpec | None = None) -> PseudoOutcomes:
    """Held-out CATE predictions: each fold is predicted by a model fit on the others."""
    if k < 2:
        raise ValueError("need k >= 2 folds")
    rng = as_rngspec(rng)
    fa = kfold_split(data.n, k, rng.child(0))
    out = np.empty(data.n)
    for f, rows in enumerate(fa.folds()):
        train = np.flatnonzero(fa.fold_of != f)
        if np.intersect1d(train, rows).size:
            raise AssertionError("fold rows leaked into their own training set")
        model = cate_spec.fit(data.subset(train), rng.child(f + 1))
        out[rows] = model.predict(data.X[rows])
    return PseudoOutcomes(data.X, out, fa.fold_of)


# ---------------------------------------------------------------- experiment specs


@dataclass(frozen=True)
class MethodSpec:
    """One comparator. Fields left as None follow the simulation setting."""

    name: str
    B: int = 100
    m_rule: str = "half"
    delta: float = 1.0
    q_cap: float | None = 0.5
    grid_size: int = 50
    selector: str | None = None
    cate: CateSpec | None = None
    folds: int | None = None
    univariate: bool = False

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"unknown method {self.name!r}; choose from {METHODS}")


def default_cate(sim: SimConfig, method: str = "dr") -> CateSpec:
    """Ridge for the linear setting, boosting for the nonlinear one; known e in an RCT."""
    base = "ridge" if sim.setting == "linear" else "gbt"
    prop = 0.5 if sim.n_confounders == 0 else "estimated_cv"
    return CateSpec(method=method, base_learner=base, propensity=prop)


def _selector(sim, spec):
    return spec.selector or ("lasso" if sim.setting == "linear" else "gbt")


@dataclass(frozen=True)
class ExperimentSpec:
    sim: SimConfig
    methods: tuple[MethodSpec, ...]
    alphas: tuple[float, ...] = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5)
    trials: int = 200
    seed: RngSpec = field(default_factory=lambda: RngSpec(0))
    output_dir: str | None = None
    targets: tuple[float, ...] = (0.5, 1.0, 2.0)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if any(not 0 <= a <= 0.5 for a in self.alphas):
            raise ValueError("alphas must lie in [0, 0.5]")
        if not self.methods:
            raise ValueError("no methods")


@dataclass
class MethodOutcome:
    selections: dict  # alpha -> SelectionSet
    target_selections: dict = field(default_factory=dict)  # t -> SelectionSet
    efp: np.ndarray | None = None
    seconds: float = 0.0
    error: str | None = None


@dataclass
class TrialRecord:
    trial_id: int
    truth: SelectionSet
    p: int
    outcomes: dict  # method name -> MethodOutcome


def _efp_outcome(report, alphas, targets):
    sel = {a: report.select_fdr(a) for a in alphas}
    tsel = {t: select_at_target(report.efp, t) for t in targets}
    return MethodOutcome(sel, tsel, report.efp.copy())


def _run_method(spec: MethodSpec, sim, data, truth, alphas, targets, rng: RngSpec) -> MethodOutcome:
    simc = sim.config
    kind = _selector(simc, spec)
    if spec.name == "causalstabsel":
        cfg = SelectionConfig(kind, spec.cate or default_cate(simc), spec.B, None, spec.m_rule,
                              spec.delta, spec.q_cap, spec.grid_size)
        return _efp_outcome(run_selection(data, cfg, rng).report, alphas, targets)
    if spec.name == "oracle_ipss":
        cfg = SelectionConfig(kind, B=spec.B, m_rule=spec.m_rule, delta=spec.delta, q_cap=spec.q_cap,
                              grid_size=spec.grid_size)
        return _efp_outcome(run_oracle_selection(data.X, sim.tau, cfg, rng).report, alphas, targets)
    folds = spec.folds or (10 if spec.name == "topk_gbt" else 5)
    pseudo = crossfit_pseudo_dataset(data, folds, spec.cate or default_cate(simc, "x"), rng.child(1))
    if spec.name == "naive_ipss":
        cfg = SelectionConfig(kind, B=spec.B, m_rule=spec.m_rule, delta=spec.delta, q_cap=spec.q_cap,
                              grid_size=spec.grid_size)
        return _efp_outcome(run_oracle_selection(data.X, pseudo.values, cfg, rng.child(2)).report,
                            alphas, targets)
    if spec.name == "lasso_cv":
        model, _ = learners.lasso_cv(data.X, pseudo.values, rng=rng.child(3))
        s = SelectionSet.from_mask(model.coefficients != 0)
        return MethodOutcome({a: s for a in alphas})
    if spec.name == "bh":
        pv = ols_pvalues(data.X, pseudo.values, spec.univariate)
        return MethodOutcome({a: bh_select(pv, a) for a in alphas})
    ens = learners.gbt_fit(data.X, pseudo.values, rng=rng.child(4))
    s = topk_importance_select(learners.gbt_importance(ens), len(truth))
    return MethodOutcome({a: s for a in alphas})


def run_trial(spec: ExperimentSpec, trial: int) -> TrialRecord:
    sim = generate(spec.sim.with_seed(RngSpec.for_trial(spec.seed.master_seed, trial, 0)))
    truth = SelectionSet(sim.truth.modifiers)
    outcomes = {}
    for i, ms in enumerate(spec.methods):
        rng = RngSpec.for_trial(spec.seed.master_seed, trial, 1 + i)
        t0 = time.perf_counter()
        try:
            out = _run_method(ms, sim, sim.data, truth, spec.alphas, spec.targets, rng)
        except Exception as exc:  # recorded, judged in aggregate
            out = MethodOutcome({}, error=f"{type(exc).__name__}: {exc}")
        out.seconds = time.perf_counter() - t0
        outcomes[ms.name] = out
    log.info("trial %d done", trial)
    return TrialRecord(trial, truth, sim.data.p, outcomes)


def run_trials(spec: ExperimentSpec, n_jobs: int = 1, trial_ids: Sequence[int] | None = None) -> list[TrialRecord]:
    ids = list(range(spec.trials)) if trial_ids is None else list(trial_ids)
    if n_jobs == 1:
        return [run_trial(spec, t) for t in ids]
    return list(Parallel(n_jobs=n_jobs)(delayed(run_trial)(spec, t) for t in ids))


@dataclass(frozen=True)
class ResultRow:
    method: str
    alpha: float
    mean_tpr: float
    se_tpr: float
    mean_fdr: float
    se_fdr: float
    mean_selected: float
    trials: int


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def aggregate(records: Sequence[TrialRecord], methods: Sequence[str], alphas: Sequence[float]) -> list[ResultRow]:
    """Per-(method, alpha) means and Monte Carlo standard errors over successful trials."""
    rows = []
    for name in methods:
        ok = [r for r in records if name in r.outcomes and r.outcomes[name].error is None]
        failed = len(records) - len(ok)
        if records and failed > FAILURE_LIMIT * len(records):
            errs = {r.outcomes[name].error for r in records if name in r.outcomes and r.outcomes[name].error}
            raise RuntimeError(f"method {name} failed in {failed}/{len(records)} trials: {sorted(errs)[:3]}")
        for a in alphas:
            mets = [tpr_fdr(r.outcomes[name].selections[a], r.truth, r.p) for r in ok]
            mt, st = _mean_se([m.tpr for m in mets])
            mf, sf = _mean_se([m.fdr for m in mets])
            rows.append(ResultRow(name, float(a), mt, st, mf, sf,
                                  float(np.mean([m.n_selected for m in mets])) if mets else float("nan"),
                                  len(ok)))
    return rows


def false_positive_counts(records: Sequence[TrialRecord], method: str, t: float) -> np.ndarray:
    out = []
    for r in records:
        o = r.outcomes.get(method)
        if o is None or o.error is not None:
            continue
        out.append(len(set(o.target_selections[t]) - set(r.truth)))
    return np.asarray(out, dtype=float)


def write_results_csv(rows: Sequence[ResultRow], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([r.method, repr(r.alpha), repr(r.mean_tpr), repr(r.se_tpr), repr(r.mean_fdr),
                        repr(r.se_fdr), repr(r.mean_selected), r.trials])


def read_results_csv(path) -> list[ResultRow]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [ResultRow(d["method"], float(d["alpha"]), float(d["mean_tpr"]), float(d["se_tpr"]),
                          float(d["mean_fdr"]), float(d["se_fdr"]), float(d["mean_selected"]),
                          int(d["trials"])) for d in reader]


def run_experiment(spec: ExperimentSpec, n_jobs: int = 1) -> tuple[list[ResultRow], list[TrialRecord]]:
    """Run every trial and summarize; writes results.csv when ``output_dir`` is set."""
    records = run_trials(spec, n_jobs)
    rows = aggregate(records, [m.name for m in spec.methods], spec.alphas)
    if spec.output_dir:
        out = Path(spec.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_results_csv(rows, out / "results.csv")
    return rows, records


# ---------------------------------------------------------------- bound validators


@dataclass(frozen=True)
class BoundCheckReport:
    lambdas: np.ndarray
    emp_var: np.ndarray  # (p, G)
    bound: float
    slack: np.ndarray
    B: int
    m: int
    n: int
    replications: int

    @property
    def violated(self) -> np.ndarray:
        return self.emp_var > self.bound + self.slack

    @property
    def n_violations(self) -> int:
        return int(self.violated.sum())

    @property
    def passed(self) -> bool:
        return self.n_violations == 0

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "lambda", "emp_var", "bound", "slack", "violated"])
            viol = self.violated
            for j in range(self.emp_var.shape[0]):
                for g, lam in enumerate(self.lambdas):
                    w.writerow([j, repr(float(lam)), repr(float(self.emp_var[j, g])), repr(self.bound),
                                repr(float(self.slack[j, g])), int(viol[j, g])])


def variance_bound(B: int, m: int, n: int) -> float:
    return 1.0 / (8 * B) + m * m / n


def _oracle_grid(sim: SimConfig, kind, m, size, seed: RngSpec):
    s = generate(sim.with_seed(seed))
    gen = seed.child(5).generator()
    previews = []
    for _ in range(3):
        rows = gen.choice(sim.n, m, replace=False)
        previews.append((s.data.X[rows], s.tau[rows]))
    return build_lambda_grid(kind, previews, size)


def validate_variance_bound(sim: SimConfig, B: int = 25, m: int = 50, replications: int = 200,
                            grid: LambdaGrid | None = None, selector: str = "lasso", grid_size: int = 25,
                            seed: RngSpec | int | None = None, n_jobs: int = 1,
                            tau_override=None) -> BoundCheckReport:
    """Empirical variance of oracle probabilities across fresh datasets vs 1/(8B) + m^2/n.

    ``tau_override`` maps a simulated dataset to the response used in place
    of its true CATE (handy for degenerate-selector checks).
    """
    if replications < 50:
        raise ValueError("need at least 50 replications")
    seed = as_rngspec(seed)
    if grid is None:
        grid = _oracle_grid(sim, selector, m, grid_size, RngSpec.for_trial(seed.master_seed, 0, 999))

    def one(r):
        s = generate(sim.with_seed(RngSpec.for_trial(seed.master_seed, r, 0)))
        resp = s.tau if tau_override is None else tau_override(s)
        curves, _ = estimate_oracle_probabilities(s.data.X, resp, selector, grid, B, m,
                                                  RngSpec.for_trial(seed.master_seed, r, 1))
        return curves.pi_hat

    if n_jobs == 1:
        pis = [one(r) for r in range(replications)]
    else:
        pis = Parallel(n_jobs=n_jobs)(delayed(one)(r) for r in range(replications))
    pis = np.stack(pis)
    var = pis.var(axis=0, ddof=1)
    slack = 3 * var * np.sqrt(2 / (replications - 1))
    return BoundCheckReport(grid.values, var, variance_bound(B, m, sim.n), slack, B, m, sim.n, replications)


@dataclass(frozen=True)
class BiasDecayReport:
    ns: tuple[int, ...]
    gap_lambda_min: np.ndarray  # mean gap per n at the smallest lambda
    se_lambda_min: np.ndarray
    gap_grid: np.ndarray  # same, averaged over the whole grid
    se_grid: np.ndarray
    replications: int

    @property
    def passed(self) -> bool:
        return bool(np.all(np.diff(self.gap_lambda_min) <= 0))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "gap_lambda_min", "se_lambda_min", "gap_grid_mean", "se_grid_mean", "replications"])
            for i, n in enumerate(self.ns):
                w.writerow([n, repr(float(self.gap_lambda_min[i])), repr(float(self.se_lambda_min[i])),
                            repr(float(self.gap_grid[i])), repr(float(self.se_grid[i])), self.replications])


def validate_bias_decay(sim: SimConfig, ns: Sequence[int] = (250, 1000), cate_spec=None, B: int = 25,
                        m: int = 50, reference_B: int = 100, replications: int = 100,
                        selector: str = "lasso", grid_size: int = 25, seed: RngSpec | int | None = None,
                        n_jobs: int = 1) -> BiasDecayReport:
    """Gap between cross-fitted and large-B oracle probabilities on signal features, per n.

    ``cate_spec=None`` uses the setting's DR-learner; ``"true"`` plugs in the
    true CATE, where only Monte Carlo noise remains. Sample sizes share one
    grid and one subsample size so that only the CATE error changes with n.
    """
    seed = as_rngspec(seed)
    ns = tuple(sorted(ns))
    grid = _oracle_grid(replace(sim, n=ns[-1]), selector, m, grid_size,
                        RngSpec.for_trial(seed.master_seed, 0, 999))

    def one(n, r):
        cfg = replace(sim, n=n)
        s = generate(cfg.with_seed(RngSpec.for_trial(seed.master_seed, r, 10 + ns.index(n))))
        spec = cate_spec
        if spec is None:
            spec = default_cate(cfg)
        elif spec == "true":
            spec = TrueCate(s.truth.tau_function)
        rng = RngSpec.for_trial(seed.master_seed, r, 100 + ns.index(n))
        cur, _ = estimate_selection_probabilities(s.data, selector, spec, grid, B, m, rng, SelectorParams())
        ref, _ = estimate_oracle_probabilities(s.data.X, s.tau, selector, grid, reference_B, m, rng.child(77))
        mods = list(s.truth.modifiers)
        diff = np.abs(cur.pi_hat[mods] - ref.pi_hat[mods])
        return diff[:, -1].mean(), diff.mean()

    tasks = [(n, r) for n in ns for r in range(replications)]
    if n_jobs == 1:
        res = [one(*t) for t in tasks]
    else:
        res = Parallel(n_jobs=n_jobs)(delayed(one)(*t) for t in tasks)
    res = np.asarray(res).reshape(len(ns), replications, 2)
    se = res.std(axis=1, ddof=1) / np.sqrt(replications)
    return BiasDecayReport(ns, res[:, :, 0].mean(axis=1), se[:, 0], res[:, :, 1].mean(axis=1), se[:, 1],
                           replications)


@dataclass(frozen=True)
class CalibrationReport:
    targets: tuple[float, ...]
    mean_fp: np.ndarray
    se_fp: np.ndarray
    trials: int

    @property
    def passed(self) -> bool:
        return bool(np.all(self.mean_fp <= np.asarray(self.targets) + 2 * self.se_fp))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mean_fp", "se_fp", "limit", "passed", "trials"])
            for t, mf, sf in zip(self.targets, self.mean_fp, self.se_fp):
                w.writerow([repr(t), repr(float(mf)), repr(float(sf)), repr(float(t + 2 * sf)),
                            int(mf <= t + 2 * sf), self.trials])


def efp_calibration(records: Sequence[TrialRecord], targets: Sequence[float],
                    method: str = "causalstabsel") -> CalibrationReport:
    means, ses = [], []
    for t in targets:
        m, s = _mean_se(false_positive_counts(records, method, t))
        means.append(m)
        ses.append(s)
    n = sum(1 for r in records if r.outcomes.get(method) and r.outcomes[method].error is None)
    return CalibrationReport(tuple(targets), np.asarray(means), np.asarray(ses), n)


def validate_efp_calibration(sim: SimConfig, targets: Sequence[float] = (0.5, 1.0, 2.0), trials: int = 100,
                             method: MethodSpec = MethodSpec("causalstabsel"), seed: RngSpec | int | None = None,
                             n_jobs: int = 1) -> CalibrationReport:
    spec = ExperimentSpec(sim, (method,), alphas=(0.1,), trials=trials, seed=as_rngspec(seed),
                          targets=tuple(targets))
    return efp_calibration(run_trials(spec, n_jobs), targets, method.name)
