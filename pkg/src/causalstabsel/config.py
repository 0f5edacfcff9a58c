"""TOML run configuration: defaults, named presets and flag overrides.

Precedence, lowest first: built-in defaults, preset, config file, flags.
"""

from __future__ import annotations

import copy
import math
from pathlib import Path

import tomli
import tomli_w

from .bench import METHODS, MethodSpec
from .cate import CateSpec, LearnerParams, check_propensity
from .core import RngSpec
from .pipeline import SelectionConfig
from .simgen import SimConfig


class ConfigError(ValueError):
    pass


# None means "unset"; such keys are omitted when dumping
DEFAULTS = {
    "select": {
        "outcome": "y",
        "treatment": "z",
        "target_efp": None,
        "fdr": None,
        "cate": "dr",
        "base_learner": "ridge",
        "propensity": "estimated_cv",
        "clip": [0.01, 0.99],
        "dr_folds": 2,
        "winsorize": False,
        "selector": "lasso",
        "B": 100,
        "m": None,
        "m_rule": "half",
        "delta": 1.0,
        "q_cap": 0.5,
        "grid_size": 50,
        "standardize": True,
    },
    "sim": {
        "n": 1000,
        "p": 100,
        "n_modifiers": 10,
        "n_prognostic": 10,
        "n_confounders": 0,
        "rho": 0.5,
        "snr": 1.0,
        "a": 1.0,
        "setting": "linear",
    },
    "experiment": {
        "methods": list(METHODS),
        "alphas": [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5],
        "targets": [0.5, 1.0, 2.0],
        "trials": 200,
        "B": 100,
        "delta": 1.0,
        "q_cap": 0.5,
        "grid_size": 50,
    },
    "validate": {
        "check": "variance-bound",
        "B": 25,
        "m": 50,
        "replications": 200,
        "reference_B": 100,
        "ns": [250, 1000],
        "grid_size": 25,
        "selector": "lasso",
        "cate": "dr",
        "targets": [0.5, 1.0, 2.0],
        "trials": 100,
    },
    "learners": {
        "ridge_grid": [0.1, 1.0, 10.0],
        "ridge_folds": 5,
        "gbt_rounds": 100,
        "gbt_depth": 3,
        "gbt_learning_rate": 0.1,
        "gbt_min_leaf": 5,
        "logistic_l2": 1.0,
    },
    "run": {
        "seed": 0,
        "threads": 1,
    },
}

# types for keys whose default is None
_NULLABLE_TYPES = {("select", "target_efp"): float, ("select", "fdr"): float, ("select", "m"): int}

PRESETS = {
    "paper-linear-default": {
        "sim": {"setting": "linear", "p": 100, "n_modifiers": 10, "n_prognostic": 10},
        "select": {"selector": "lasso", "base_learner": "ridge", "delta": 1.0},
    },
    "paper-nonlinear-default": {
        "sim": {"setting": "nonlinear", "p": 50, "n_modifiers": 5, "n_prognostic": 5},
        "select": {"selector": "gbt", "base_learner": "gbt", "delta": 1.0},
    },
    "application": {
        "select": {"cate": "dr", "base_learner": "ridge", "selector": "lasso", "B": 500, "delta": 2.0,
                   "m_rule": "quarter", "clip": [0.10, 0.90], "winsorize": True, "dr_folds": 5,
                   "propensity": "estimated_cv", "fdr": 0.10},
    },
}


def _check_value(section, key, value):
    default = DEFAULTS[section][key]
    want = _NULLABLE_TYPES.get((section, key)) if default is None else type(default)
    if value is None:
        if default is not None:
            raise ConfigError(f"[{section}] {key} cannot be empty")
        return None
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if want is bool and not isinstance(value, bool):
        raise ConfigError(f"[{section}] {key} must be true or false")
    if (section, key) == ("select", "propensity"):
        try:
            return check_propensity(value if isinstance(value, str) else float(value))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[select] propensity: {exc}") from None
    if not isinstance(value, want) or (want is int and isinstance(value, bool)):
        raise ConfigError(f"[{section}] {key} must be {want.__name__}, got {type(value).__name__}")
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"[{section}] {key} must be finite")
    return value


def merge(base: dict, overrides: dict, source: str = "config") -> dict:
    out = copy.deepcopy(base)
    for section, values in overrides.items():
        if section not in DEFAULTS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"{source}: [{section}] must be a table")
        for key, value in values.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            out[section][key] = _check_value(section, key, value)
    return out


def resolve(path=None, preset: str | None = None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = merge(cfg, PRESETS[preset], f"preset {preset}")
    if path is not None:
        cfg = merge(cfg, load(path), str(path))
    if overrides:
        cfg = merge(cfg, {s: {k: v for k, v in d.items() if v is not None} for s, d in overrides.items()},
                    "flags")
    return cfg


def load(path) -> dict:
    try:
        with Path(path).open("rb") as fh:
            return tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def dumps(cfg: dict) -> str:
    clean = {s: {k: v for k, v in d.items() if v is not None} for s, d in cfg.items()}
    return tomli_w.dumps(clean)


def parse(text: str) -> dict:
    return merge(copy.deepcopy(DEFAULTS), tomli.loads(text), "text")


# ---------------------------------------------------------------- builders


def learner_params(cfg) -> LearnerParams:
    c = cfg["learners"]
    return LearnerParams(tuple(float(v) for v in c["ridge_grid"]), c["ridge_folds"], c["gbt_rounds"],
                         c["gbt_depth"], c["gbt_learning_rate"], c["gbt_min_leaf"], c["logistic_l2"])


def cate_spec(cfg) -> CateSpec:
    s = cfg["select"]
    clip = tuple(float(v) for v in s["clip"])
    if len(clip) != 2:
        raise ConfigError("[select] clip needs two values")
    return CateSpec(s["cate"].lower(), s["base_learner"], s["propensity"], clip, s["dr_folds"],
                    s["winsorize"], learner_params(cfg))


def selection_config(cfg) -> SelectionConfig:
    s = cfg["select"]
    return SelectionConfig(s["selector"], cate_spec(cfg), s["B"], s["m"], s["m_rule"], s["delta"],
                           s["q_cap"], s["grid_size"])


def sim_config(cfg) -> SimConfig:
    s = cfg["sim"]
    return SimConfig(s["n"], s["p"], s["n_modifiers"], s["n_prognostic"], s["n_confounders"], s["rho"],
                     s["snr"], s["a"], s["setting"], RngSpec(cfg["run"]["seed"]))


def method_specs(cfg) -> tuple[MethodSpec, ...]:
    e = cfg["experiment"]
    return tuple(MethodSpec(name, B=e["B"], delta=e["delta"], q_cap=e["q_cap"], grid_size=e["grid_size"])
                 for name in e["methods"])
