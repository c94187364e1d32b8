from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

import numpy as np
from scipy.stats import rankdata

from ..errors import ConfigError, TrainingError

EPS = 1e-12


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def derive_seed(base_seed: int, tag: str) -> int:
    """Stable 63-bit seed for one task, independent of process or scheduling."""
    digest = hashlib.sha256(f"{base_seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class ClassWeights:
    w_pos: float
    w_neg: float
    n_pos: int
    n_neg: int

    def per_sample(self, labels) -> np.ndarray:
        y = np.asarray(labels, dtype=float)
        return np.where(y >= 0.5, self.w_pos, self.w_neg)


def class_weights(labels) -> ClassWeights:
    """Up-weight the minority class by n_majority / n_minority."""
    y = np.asarray(labels)
    if y.size == 0:
        raise ValueError("labels must be non-empty")
    n_pos = int(np.sum(y >= 0.5))
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("degenerate class: labels contain a single class")
    if n_pos < n_neg:
        return ClassWeights(n_neg / n_pos, 1.0, n_pos, n_neg)
    return ClassWeights(1.0, n_pos / n_neg, n_pos, n_neg)


def weighted_bce(scores, labels, weights) -> float:
    """Mean of -w_i [y log s + (1 - y) log(1 - s)].

    ``weights`` is a ClassWeights (looked up by each label's class), a
    per-sample array, or None for unit weights.
    """
    s = np.clip(np.asarray(scores, dtype=float), EPS, 1.0 - EPS)
    y = np.asarray(labels, dtype=float)
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {y.shape}")
    if weights is None:
        w = np.ones_like(y)
    elif isinstance(weights, ClassWeights):
        w = weights.per_sample(y)
    else:
        w = np.asarray(weights, dtype=float)
    return float(np.mean(-w * (y * np.log(s) + (1.0 - y) * np.log(1.0 - s))))


def score_bin_weights(y) -> np.ndarray:
    """Inverse-frequency sample weights over integer score bins, mean 1."""
    bins = np.rint(np.asarray(y, dtype=float)).astype(int)
    _, inverse, counts = np.unique(bins, return_inverse=True, return_counts=True)
    w = 1.0 / counts[inverse]
    return w * (len(w) / w.sum())


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve (Mann-Whitney form, ties averaged); NaN if one class."""
    y = np.asarray(labels) >= 0.5
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(np.asarray(scores, dtype=float))
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 32
    l2: float = 1e-4
    dropout_rate: float = 0.2
    target_noise_sd: float = 0.1
    seed: int = 0
    early_stop_patience: int = 20

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.early_stop_patience < 1:
            raise ConfigError("epochs, batch_size and early_stop_patience must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.l2 < 0 or self.target_noise_sd < 0:
            raise ConfigError("l2 and target_noise_sd must be non-negative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "TrainConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return TrainConfig(**d)


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for {k}")
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class EarlyStopper:
    """Keeps the best parameter snapshot by a higher-is-better metric."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_params = None
        self.best_epoch = -1
        self.bad = 0

    def update(self, epoch: int, metric: float, params: dict) -> bool:
        """Record one epoch; returns True when training should stop."""
        if np.isfinite(metric) and metric > self.best:
            self.best = metric
            self.best_params = {k: v.copy() for k, v in params.items()}
            self.best_epoch = epoch
            self.bad = 0
            return False
        self.bad += 1
        return self.bad >= self.patience
