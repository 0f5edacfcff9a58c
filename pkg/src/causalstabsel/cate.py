"""Cross-fitting machinery and the T-, X- and DR-learners."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Protocol

import numpy as np

from . import learners
from .core import Dataset, RngSpec, as_rngspec, balanced_folds

METHODS = ("t", "x", "dr")
BASE_LEARNERS = ("ridge", "gbt")
SIM_CLIP = (0.01, 0.99)
APPLICATION_CLIP = (0.10, 0.90)


class CateError(RuntimeError):
    pass


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: np.ndarray
    k: int

    def folds(self):
        return [np.flatnonzero(self.fold_of == f) for f in range(self.k)]


def kfold_split(n: int, k: int, rng: RngSpec | None = None) -> FoldAssignment:
    return FoldAssignment(balanced_folds(n, k, as_rngspec(rng).generator()), k)


# ---------------------------------------------------------------- regressors


@dataclass(frozen=True)
class LearnerParams:
    """Hyperparameters for the base regression learners."""

    ridge_grid: tuple[float, ...] = tuple(learners.DEFAULT_RIDGE_GRID)
    ridge_folds: int = 5
    gbt_rounds: int = 100
    gbt_depth: int = 3
    gbt_learning_rate: float = 0.1
    gbt_min_leaf: int = 5
    logistic_l2: float = 1.0


def fit_regressor(X, y, base_learner: str, params: LearnerParams, rng: RngSpec):
    if base_learner == "ridge":
        k = min(params.ridge_folds, len(y))
        if k < 2:
            return learners.ridge_fit(X, y, float(max(params.ridge_grid)))
        return learners.ridge_cv(X, y, params.ridge_grid, k, rng)
    if base_learner == "gbt":
        return learners.gbt_fit(X, y, params.gbt_rounds, params.gbt_depth,
                                params.gbt_learning_rate, params.gbt_min_leaf, rng)
    raise ValueError(f"unknown base learner {base_learner!r}")


def _min_arm_rows(base_learner, params):
    return params.gbt_min_leaf if base_learner == "gbt" else 2


# ---------------------------------------------------------------- nuisances


@dataclass(frozen=True)
class ConstantPropensity:
    value: float

    def predict(self, X) -> np.ndarray:
        return np.full(np.asarray(X).shape[0], self.value)


@dataclass(frozen=True)
class NuisanceModels:
    m0: Any
    m1: Any
    e: Any  # ConstantPropensity or fitted LinearModel
    clip: tuple[float, float] = SIM_CLIP

    def __post_init__(self):
        lo, hi = self.clip
        if not (0 < lo < hi < 1):
            raise ValueError(f"invalid propensity clip {self.clip}")

    def propensity(self, X) -> np.ndarray:
        if isinstance(self.e, ConstantPropensity):
            raw = self.e.predict(X)
        else:
            raw = self.e.predict_proba(X)
        return np.clip(raw, *self.clip)


PROPENSITY_MODES = ("estimated", "estimated_cv")


def check_propensity(propensity):
    if isinstance(propensity, str):
        if propensity not in PROPENSITY_MODES:
            raise ValueError(f"propensity must be a number in (0, 1) or one of {PROPENSITY_MODES}")
    elif not 0 < float(propensity) < 1:
        raise ValueError("known propensity must lie in (0, 1)")
    return propensity


def fit_nuisances(data: Dataset, base_learner: str = "ridge", propensity: float | str = "estimated",
                  clip=SIM_CLIP, rng: RngSpec | None = None,
                  params: LearnerParams = LearnerParams()) -> NuisanceModels:
    """Per-arm outcome regressions and a (known or logistic) propensity model."""
    rng = as_rngspec(rng)
    check_propensity(propensity)
    treated = data.z == 1
    need = _min_arm_rows(base_learner, params)
    if treated.sum() < need or (~treated).sum() < need:
        raise CateError(f"each treatment arm needs at least {need} rows "
                        f"(treated {int(treated.sum())}, control {int((~treated).sum())})")
    m1 = fit_regressor(data.X[treated], data.y[treated], base_learner, params, rng.child(1))
    m0 = fit_regressor(data.X[~treated], data.y[~treated], base_learner, params, rng.child(0))
    if propensity == "estimated":
        e = learners.logistic_fit(data.X, data.z, params.logistic_l2)
    elif propensity == "estimated_cv":
        e = learners.logistic_cv(data.X, data.z, rng=rng.child(2))
    else:
        e = ConstantPropensity(float(propensity))
    return NuisanceModels(m0, m1, e, tuple(clip))


def dr_pseudo_outcomes(data: Dataset, nuisances: NuisanceModels) -> np.ndarray:
    """AIPW pseudo-outcomes whose conditional mean given x is the CATE."""
    e = nuisances.propensity(data.X)
    mu0 = nuisances.m0.predict(data.X)
    mu1 = nuisances.m1.predict(data.X)
    if not (np.all(np.isfinite(mu0)) and np.all(np.isfinite(mu1)) and np.all(np.isfinite(e))):
        raise CateError("non-finite nuisance prediction")
    z = data.z.astype(float)
    mu_z = np.where(z == 1, mu1, mu0)
    return (z - e) / (e * (1 - e)) * (data.y - mu_z) + mu1 - mu0


def winsorize(values, lower=0.01, upper=0.99):
    lo, hi = np.quantile(values, [lower, upper])
    return np.clip(values, lo, hi)


# ---------------------------------------------------------------- CATE models


@dataclass(frozen=True)
class CateModel:
    method: str
    base_learner: str
    components: dict
    n_features: int

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} columns, got shape {X.shape}")
        if X.shape[0] == 0:
            return np.zeros(0)
        c = self.components
        if self.method == "t":
            out = c["m1"].predict(X) - c["m0"].predict(X)
        elif self.method == "x":
            g = c["nuisances"].propensity(X)
            out = g * c["tau0"].predict(X) + (1 - g) * c["tau1"].predict(X)
        else:
            out = c["tau"].predict(X)
        return np.asarray(out, dtype=float)


def predict_cate(model, X) -> np.ndarray:
    return model.predict(X)


def fit_cate(train: Dataset, method: str = "dr", base_learner: str = "ridge",
             propensity: float | str = "estimated", rng: RngSpec | None = None, *,
             clip=SIM_CLIP, dr_folds: int = 2, winsorize_pseudo: bool = False,
             params: LearnerParams = LearnerParams()) -> CateModel:
    """Fit a T-, X- or DR-learner on ``train``."""
    method = method.lower()
    if method not in METHODS:
        raise ValueError(f"unknown CATE method {method!r}")
    rng = as_rngspec(rng)
    if method == "t":
        nuis = fit_nuisances(train, base_learner, propensity, clip, rng.child(10), params)
        comps = {"m0": nuis.m0, "m1": nuis.m1}
    elif method == "x":
        nuis = fit_nuisances(train, base_learner, propensity, clip, rng.child(10), params)
        t = train.z == 1
        d1 = train.y[t] - nuis.m0.predict(train.X[t])
        d0 = nuis.m1.predict(train.X[~t]) - train.y[~t]
        tau1 = fit_regressor(train.X[t], d1, base_learner, params, rng.child(21))
        tau0 = fit_regressor(train.X[~t], d0, base_learner, params, rng.child(20))
        comps = {"nuisances": nuis, "tau0": tau0, "tau1": tau1}
    else:
        phi = crossfit_dr_pseudo_outcomes(train, base_learner, propensity, clip, dr_folds,
                                          rng.child(30), params)
        if winsorize_pseudo:
            phi = winsorize(phi)
        tau = fit_regressor(train.X, phi, base_learner, params, rng.child(31))
        comps = {"tau": tau}
    return CateModel(method, base_learner, comps, train.p)


def crossfit_dr_pseudo_outcomes(data: Dataset, base_learner="ridge", propensity="estimated",
                                clip=SIM_CLIP, k: int = 2, rng: RngSpec | None = None,
                                params: LearnerParams = LearnerParams()) -> np.ndarray:
    """DR pseudo-outcomes with nuisances fit on the other folds."""
    rng = as_rngspec(rng)
    folds = kfold_split(data.n, k, rng.child(0)).folds()
    phi = np.empty(data.n)
    for f, rows in enumerate(folds):
        rest = np.setdiff1d(np.arange(data.n), rows, assume_unique=True)
        nuis = fit_nuisances(data.subset(rest), base_learner, propensity, clip, rng.child(f + 1), params)
        phi[rows] = dr_pseudo_outcomes(data.subset(rows), nuis)
    return phi


# ---------------------------------------------------------------- estimator specs


class CateEstimator(Protocol):
    def fit(self, train: Dataset, rng: RngSpec): ...


@dataclass(frozen=True)
class CateSpec:
    """A configured CATE estimator; ``fit`` returns a model with ``predict``."""

    method: str = "dr"
    base_learner: str = "ridge"
    propensity: float | str = "estimated"
    clip: tuple[float, float] = SIM_CLIP
    dr_folds: int = 2
    winsorize: bool = False
    params: LearnerParams = field(default_factory=LearnerParams)

    def fit(self, train: Dataset, rng: RngSpec) -> CateModel:
        return fit_cate(train, self.method, self.base_learner, self.propensity, rng,
                        clip=self.clip, dr_folds=self.dr_folds,
                        winsorize_pseudo=self.winsorize, params=self.params)

    def with_(self, **changes) -> "CateSpec":
        return replace(self, **changes)


@dataclass(frozen=True)
class TrueCate:
    """Stub estimator that ignores its training data and returns a known tau."""

    tau: Callable[[np.ndarray], np.ndarray]

    def fit(self, train: Dataset, rng: RngSpec) -> "TrueCate":
        return self

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.tau(np.asarray(X, dtype=float)), dtype=float)
