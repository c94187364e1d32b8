"""Base classifiers and traditional regressors behind one fitting interface."""

from __future__ import annotations

from dataclasses import fields

from ..features import FC, SEQ
from .base import MODEL_KINDS, ConstantScorer, Model, dumps, from_document, load_model, loads, save_model
from .common import (
    Adam, ClassWeights, TrainConfig, class_weights, derive_seed, roc_auc, score_bin_weights,
    sigmoid, weighted_bce,
)
from .forest import RandomForest, RandomForestRegressor
from .linear import LinearRegression, LinearSVM, LinearSVR, LogisticRegression
from .neural import LSTMClassifier, LSTMRegressor, MLPClassifier, MLPRegressor
from .search import GridResult, grid_search

CLASSIFIERS = {
    "LR": LogisticRegression,
    "LinearSVM": LinearSVM,
    "RandomForest": RandomForest,
    "MLP": MLPClassifier,
    "LSTM": LSTMClassifier,
}

REGRESSORS = {
    "LinearRegression": LinearRegression,
    "LinearSVR": LinearSVR,
    "RandomForestReg": RandomForestRegressor,
    "MLPReg": MLPRegressor,
    "LSTMReg": LSTMRegressor,
}

REGRESSOR_FOR = {
    "LR": "LinearRegression",
    "LinearSVM": "LinearSVR",
    "RandomForest": "RandomForestReg",
    "MLP": "MLPReg",
    "LSTM": "LSTMReg",
}

_SVM_GRID = [{"C": c, "scale": s} for c in (0.1, 1.0, 10.0) for s in (0.5, 1.0, 2.0)]
_L2_GRID = [{"l2": v} for v in (1e-3, 1e-2, 1e-1, 1.0)]
_TREE_GRID = [{"n_trees": n} for n in (50, 100, 200, 400)]

DEFAULT_GRIDS = {
    "LR": _L2_GRID,
    "LinearSVM": _SVM_GRID,
    "RandomForest": _TREE_GRID,
    "MLP": [{"hidden": None}],
    "LSTM": [{"hidden": 16}, {"hidden": 32}],
    "LinearRegression": _L2_GRID,
    "LinearSVR": _SVM_GRID,
    "RandomForestReg": _TREE_GRID,
    "MLPReg": [{"hidden": None}],
    "LSTMReg": [{"hidden": 16}],
}

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_NEURAL = {"MLP", "LSTM", "MLPReg", "LSTMReg"}


def view_of(kind: str) -> str:
    return SEQ if kind in ("LSTM", "LSTMReg") else FC


def split_setting(kind: str, setting: dict, config: TrainConfig, seed: int):
    """Separate model arguments from TrainConfig overrides.

    Only the neural kinds take a TrainConfig; for them, keys naming a
    TrainConfig field (``l2``, ``learning_rate``, ...) override it. Every other
    kind receives the whole setting as keyword arguments.
    """
    if kind not in _NEURAL:
        return dict(setting), config.replace(seed=seed)
    overrides = {k: v for k, v in setting.items() if k in _TRAIN_KEYS and k != "seed"}
    model_args = {k: v for k, v in setting.items() if k not in _TRAIN_KEYS}
    return model_args, config.replace(**overrides, seed=seed)


def fit_classifier(kind: str, X, y, weights, setting: dict, config: TrainConfig = TrainConfig(),
                   seed: int = 0, monitor=None) -> Model:
    """Train one base classifier of ``kind`` with a grid ``setting``."""
    if kind not in CLASSIFIERS:
        raise ValueError(f"unknown classifier kind {kind!r}")
    args, cfg = split_setting(kind, setting, config, seed)
    cls = CLASSIFIERS[kind]
    if kind in _NEURAL:
        return cls.fit(X, y, weights, config=cfg, monitor=monitor, **args)
    return cls.fit(X, y, weights, seed=seed, **args)


def fit_regressor(kind: str, X, y, setting: dict, config: TrainConfig = TrainConfig(),
                  seed: int = 0, monitor=None) -> Model:
    """Train one traditional regression baseline of ``kind``."""
    if kind not in REGRESSORS:
        raise ValueError(f"unknown regressor kind {kind!r}")
    args, cfg = split_setting(kind, setting, config, seed)
    cls = REGRESSORS[kind]
    if kind in _NEURAL:
        return cls.fit(X, y, config=cfg, monitor=monitor, **args)
    return cls.fit(X, y, seed=seed, **args)


def search(kind: str, fit, grid, evaluate) -> GridResult:
    """grid_search, sharing one forest when settings differ only in n_trees."""
    if kind in ("RandomForest", "RandomForestReg") and all("n_trees" in g for g in grid):
        rest = [{k: v for k, v in g.items() if k != "n_trees"} for g in grid]
        if all(r == rest[0] for r in rest):
            largest = max(g["n_trees"] for g in grid)
            full = fit(dict(grid[0], n_trees=largest))
            return grid_search(lambda g: full.truncated(g["n_trees"]), grid, evaluate)
    return grid_search(fit, grid, evaluate)


__all__ = [
    "Adam", "CLASSIFIERS", "ClassWeights", "ConstantScorer", "DEFAULT_GRIDS", "FC",
    "GridResult", "LSTMClassifier", "LSTMRegressor", "LinearRegression", "LinearSVM",
    "LinearSVR", "LogisticRegression", "MLPClassifier", "MLPRegressor", "MODEL_KINDS",
    "Model", "REGRESSORS", "REGRESSOR_FOR", "RandomForest", "RandomForestRegressor", "SEQ",
    "TrainConfig", "class_weights", "derive_seed", "dumps", "fit_classifier", "fit_regressor",
    "from_document", "grid_search", "load_model", "loads", "roc_auc", "save_model", "search",
    "score_bin_weights", "sigmoid", "split_setting", "view_of", "weighted_bce",
]
