"""Synthetic data: Toeplitz Gaussian covariates, sparse or bump-shaped mu and tau,
RCT or logistic treatment assignment and SNR-calibrated Gaussian noise."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .core import DataError, Dataset, RngSpec, as_generator, standardize_columns, write_csv

SETTINGS = ("linear", "nonlinear")


@dataclass(frozen=True)
class SimConfig:
    n: int = 1000
    p: int = 100
    n_modifiers: int = 10
    n_prognostic: int = 10
    n_confounders: int = 0
    rho: float = 0.5
    snr: float = 1.0
    a: float = 1.0
    setting: str = "linear"
    seed: RngSpec = field(default_factory=lambda: RngSpec(0))

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}")
        if self.n < 4 or self.p < 1:
            raise ValueError("need n >= 4 and p >= 1")
        for name in ("n_modifiers", "n_prognostic", "n_confounders"):
            k = getattr(self, name)
            if not 0 <= k <= self.p:
                raise ValueError(f"{name}={k} must lie in [0, p={self.p}]")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")
        if not self.snr > 0 or self.a < 0:
            raise ValueError("need snr > 0 and a >= 0")

    @classmethod
    def linear_default(cls, **kw) -> "SimConfig":
        return cls(**kw)

    @classmethod
    def nonlinear_default(cls, **kw) -> "SimConfig":
        base = dict(p=50, n_modifiers=5, n_prognostic=5, setting="nonlinear")
        base.update(kw)
        return cls(**base)

    def with_seed(self, seed: RngSpec) -> "SimConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class GroundTruth:
    modifiers: tuple[int, ...]
    prognostic: tuple[int, ...]
    confounders: tuple[int, ...]
    beta: np.ndarray
    gamma: np.ndarray
    sigma2: float = float("nan")
    setting: str = "linear"
    # affine maps taking raw mu/tau to their standardized form in this dataset
    mu_shift: float = 0.0
    mu_scale: float = 1.0
    tau_shift: float = 0.0
    tau_scale: float = 1.0

    def raw_mu_tau(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=float)
        if self.setting == "linear":
            return X @ self.beta, X @ self.gamma
        bump = np.exp(-X**2 / 8)
        return bump[:, list(self.prognostic)].sum(axis=1), bump[:, list(self.modifiers)].sum(axis=1)

    def tau_function(self, X) -> np.ndarray:
        """The standardized CATE of this dataset, as a function of x."""
        return (self.raw_mu_tau(X)[1] - self.tau_shift) / self.tau_scale

    def mu_function(self, X) -> np.ndarray:
        return (self.raw_mu_tau(X)[0] - self.mu_shift) / self.mu_scale


@dataclass(frozen=True)
class SimulatedDataset:
    data: Dataset
    truth: GroundTruth
    mu: np.ndarray
    tau: np.ndarray
    propensity: np.ndarray
    noise: np.ndarray
    config: SimConfig


def toeplitz_gaussian(n: int, p: int, rho: float, rng, standardize: bool = True) -> np.ndarray:
    """Rows i.i.d. N(0, Sigma) with Sigma_ij = rho^|i-j|."""
    if not abs(rho) < 1:
        raise ValueError("need |rho| < 1")
    idx = np.arange(p)
    sigma = rho ** np.abs(idx[:, None] - idx[None, :])
    chol = np.linalg.cholesky(sigma)
    X = as_generator(rng).standard_normal((n, p)) @ chol.T
    if standardize:
        X = standardize_columns(X)[0]
    return X


def _coefficients(gen, k):
    mags = gen.uniform(0.5, 1.0, size=k)
    signs = np.where(gen.random(k) < 0.5, -1.0, 1.0)
    return signs * mags


def draw_truth(config: SimConfig, rng) -> GroundTruth:
    gen = as_generator(rng)
    p = config.p
    mods = np.sort(gen.choice(p, config.n_modifiers, replace=False))
    prog = np.sort(gen.choice(p, config.n_prognostic, replace=False))
    conf = np.sort(gen.choice(p, config.n_confounders, replace=False))
    beta = np.zeros(p)
    gamma = np.zeros(p)
    beta[prog] = _coefficients(gen, len(prog))
    gamma[mods] = _coefficients(gen, len(mods))
    return GroundTruth(tuple(int(j) for j in mods), tuple(int(j) for j in prog),
                       tuple(int(j) for j in conf), beta, gamma, setting=config.setting)


def _standardize(v, what):
    mean = v.mean()
    scale = np.sqrt(np.mean((v - mean) ** 2))
    if not scale > 1e-12 * max(1.0, abs(mean)):
        raise DataError(f"{what} has zero variance (empty support?)")
    return (v - mean) / scale, mean, scale


def eval_mu_tau(X, truth: GroundTruth, setting: str | None = None):
    """Standardized (mu, tau) and the truth updated with the standardizing maps."""
    if setting is not None and setting != truth.setting:
        truth = replace(truth, setting=setting)
    raw_mu, raw_tau = truth.raw_mu_tau(X)
    mu, ms, mc = _standardize(raw_mu, "mu")
    tau, ts, tc = _standardize(raw_tau, "tau")
    return mu, tau, replace(truth, mu_shift=ms, mu_scale=mc, tau_shift=ts, tau_scale=tc)


def assign_treatment(X, confounders, rng):
    gen = as_generator(rng)
    conf = list(confounders)
    if conf:
        prop = expit(np.asarray(X)[:, conf].sum(axis=1))
    else:
        prop = np.full(np.asarray(X).shape[0], 0.5)
    z = (gen.random(prop.shape[0]) < prop).astype(np.int8)
    return z, prop


def calibrate_noise(mu, tau, z, a: float, snr: float) -> float:
    if not snr > 0:
        raise ValueError("snr must be positive")
    signal = a * np.asarray(mu) + np.asarray(z) * np.asarray(tau)
    var = float(np.var(signal))
    if not var > 0:
        raise DataError("zero signal variance")
    return var / snr


def generate(config: SimConfig) -> SimulatedDataset:
    """One simulated trial, fully determined by ``config.seed``."""
    seed = config.seed
    X = toeplitz_gaussian(config.n, config.p, config.rho, seed.child(1))
    truth = draw_truth(config, seed.child(2))
    mu, tau, truth = eval_mu_tau(X, truth)
    # redraw on the (tiny-n) chance that an arm is empty
    for attempt in range(100):
        z, prop = assign_treatment(X, truth.confounders, seed.child(3 + 1000 * attempt))
        if 0 < z.sum() < config.n:
            break
    else:
        raise DataError("could not draw both treatment arms")
    sigma2 = calibrate_noise(mu, tau, z, config.a, config.snr)
    eps = as_generator(seed.child(4)).normal(0.0, np.sqrt(sigma2), config.n)
    y = config.a * mu + z * tau + eps
    truth = replace(truth, sigma2=sigma2)
    return SimulatedDataset(Dataset(X, y, z), truth, mu, tau, prop, eps, config)


def dump_csv(sim: SimulatedDataset, prefix) -> tuple[Path, Path]:
    """Write ``<prefix>_data.csv`` and ``<prefix>_truth.csv``."""
    prefix = Path(prefix)
    data_path = prefix.with_name(prefix.name + "_data.csv")
    truth_path = prefix.with_name(prefix.name + "_truth.csv")
    write_csv(sim.data, data_path)
    t = sim.truth
    with truth_path.open("w", encoding="utf-8") as fh:
        fh.write("feature,modifier,prognostic,confounder,beta,gamma\n")
        for j, name in enumerate(sim.data.feature_names):
            fh.write(f"{name},{int(j in t.modifiers)},{int(j in t.prognostic)},"
                     f"{int(j in t.confounders)},{t.beta[j]!r},{t.gamma[j]!r}\n")
        fh.write(f"# sigma2={t.sigma2!r}\n")
    return data_path, truth_path
