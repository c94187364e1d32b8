"""MLP and single-layer LSTM learners with hand-written backpropagation.

Both networks share one training loop: mini-batch Adam on a (weighted)
loss with l2 on weight matrices, inverted dropout, optional Gaussian noise
on binary targets, and early stopping on a monitored validation metric.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import TrainingError
from ..features import SEQ
from .base import Model, register
from .common import Adam, ClassWeights, EarlyStopper, TrainConfig, score_bin_weights, sigmoid

BINARY = "binary"
REGRESSION = "regression"

_WEIGHT_KEYS = {"W1", "W2", "W3", "Wx", "Wh", "w_out"}


def _output_loss(z, y, w, task):
    """Loss and d loss / d z for the output pre-activation z."""
    n = len(z)
    if task == BINARY:
        loss = np.mean(w * (np.logaddexp(0.0, z) - y * z))
        dz = w * (sigmoid(z) - y) / n
    else:
        r = z - y
        loss = np.mean(w * r * r)
        dz = 2.0 * w * r / n
    return loss, dz


def _l2_term(params, l2):
    if l2 == 0:
        return 0.0
    return 0.5 * l2 * sum(float(np.sum(params[k] ** 2)) for k in params if k in _WEIGHT_KEYS)


def _add_l2_grad(grads, params, l2):
    if l2:
        for k in grads:
            if k in _WEIGHT_KEYS:
                grads[k] += l2 * params[k]


# ---------------------------------------------------------------- MLP

def init_mlp(d: int, hidden: tuple[int, int], rng) -> dict:
    h1, h2 = hidden
    return {
        "W1": rng.normal(0.0, np.sqrt(2.0 / d), size=(d, h1)),
        "b1": np.zeros(h1),
        "W2": rng.normal(0.0, np.sqrt(2.0 / h1), size=(h1, h2)),
        "b2": np.zeros(h2),
        "W3": rng.normal(0.0, np.sqrt(1.0 / h2), size=h2),
        "b3": np.zeros(()),
    }


def mlp_forward(params, X, masks=None):
    a1 = X @ params["W1"] + params["b1"]
    h1 = np.maximum(a1, 0.0)
    if masks is not None:
        h1 = h1 * masks[0]
    a2 = h1 @ params["W2"] + params["b2"]
    h2 = np.maximum(a2, 0.0)
    if masks is not None:
        h2 = h2 * masks[1]
    z = h2 @ params["W3"] + params["b3"]
    return z, (X, a1, h1, a2, h2)


def mlp_loss_grad(params, X, y, w, l2=0.0, task=BINARY, masks=None):
    z, (X, a1, h1, a2, h2) = mlp_forward(params, X, masks)
    loss, dz = _output_loss(z, y, w, task)
    grads = {"W3": h2.T @ dz, "b3": np.asarray(dz.sum())}
    dh2 = np.outer(dz, params["W3"])
    if masks is not None:
        dh2 = dh2 * masks[1]
    da2 = dh2 * (a2 > 0)
    grads["W2"] = h1.T @ da2
    grads["b2"] = da2.sum(axis=0)
    dh1 = da2 @ params["W2"].T
    if masks is not None:
        dh1 = dh1 * masks[0]
    da1 = dh1 * (a1 > 0)
    grads["W1"] = X.T @ da1
    grads["b1"] = da1.sum(axis=0)
    _add_l2_grad(grads, params, l2)
    return loss + _l2_term(params, l2), grads


def _mlp_masks(rng, n, params, rate):
    if rate <= 0:
        return None
    keep = 1.0 - rate
    return tuple(
        (rng.random((n, params[k].shape[1])) < keep) / keep for k in ("W1", "W2")
    )


# ---------------------------------------------------------------- LSTM

def init_lstm(d: int, hidden: int, rng) -> dict:
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget gate bias
    return {
        "Wx": rng.normal(0.0, np.sqrt(1.0 / d), size=(d, 4 * hidden)),
        "Wh": rng.normal(0.0, np.sqrt(1.0 / hidden), size=(hidden, 4 * hidden)),
        "b": b,
        "w_out": rng.normal(0.0, np.sqrt(1.0 / hidden), size=hidden),
        "b_out": np.zeros(()),
    }


def lstm_forward(params, X, mask=None):
    """Gate order i, f, o, g. Hidden states are mean-pooled over time."""
    B, T, _ = X.shape
    H = params["Wh"].shape[0]
    xg = X @ params["Wx"] + params["b"]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs, cs, gates = [], [], []
    pooled = np.zeros((B, H))
    Wh = params["Wh"]
    for t in range(T):
        a = xg[:, t] + h @ Wh
        i = sigmoid(a[:, :H])
        f = sigmoid(a[:, H:2 * H])
        o = sigmoid(a[:, 2 * H:3 * H])
        g = np.tanh(a[:, 3 * H:])
        cs.append(c)
        hs.append(h)
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates.append((i, f, o, g, tc))
        pooled += h
    pooled /= T
    out_in = pooled * mask if mask is not None else pooled
    z = out_in @ params["w_out"] + params["b_out"]
    return z, (X, hs, cs, gates, out_in)


def lstm_loss_grad(params, X, y, w, l2=0.0, task=BINARY, mask=None):
    z, (X, hs, cs, gates, out_in) = lstm_forward(params, X, mask)
    loss, dz = _output_loss(z, y, w, task)
    B, T, D = X.shape
    H = params["Wh"].shape[0]
    Wh = params["Wh"]
    grads = {"w_out": out_in.T @ dz, "b_out": np.asarray(dz.sum())}
    dpool = np.outer(dz, params["w_out"])
    if mask is not None:
        dpool = dpool * mask
    dh_step = dpool / T
    dA = np.empty((B, T, 4 * H))
    dWh = np.zeros_like(Wh)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i, f, o, g, tc = gates[t]
        dh = dh_step + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = dA[:, t]
        da[:, :H] = dc * g * i * (1.0 - i)
        da[:, H:2 * H] = dc * cs[t] * f * (1.0 - f)
        da[:, 2 * H:3 * H] = do * o * (1.0 - o)
        da[:, 3 * H:] = dc * i * (1.0 - g * g)
        dWh += hs[t].T @ da
        dh_next = da @ Wh.T
        dc_next = dc * f
    grads["Wx"] = X.reshape(-1, D).T @ dA.reshape(-1, 4 * H)
    grads["Wh"] = dWh
    grads["b"] = dA.sum(axis=(0, 1))
    _add_l2_grad(grads, params, l2)
    return loss + _l2_term(params, l2), grads


def _lstm_mask(rng, n, params, rate):
    if rate <= 0:
        return None
    keep = 1.0 - rate
    return (rng.random((n, params["Wh"].shape[0])) < keep) / keep


# ---------------------------------------------------------------- training

def train_network(params, loss_grad, make_masks, X, y, w, config: TrainConfig, task,
                  rng, monitor: Callable[[dict], float] | None = None) -> dict:
    """Mini-batch Adam; returns the best parameters seen by ``monitor``.

    Without a monitor the final parameters after ``config.epochs`` are kept.
    """
    opt = Adam(params, lr=config.learning_rate)
    stopper = EarlyStopper(config.early_stop_patience) if monitor is not None else None
    n = len(y)
    for epoch in range(config.epochs):
        target = y
        if task == BINARY and config.target_noise_sd > 0:
            target = np.clip(y + rng.normal(0.0, config.target_noise_sd, size=n), 0.0, 1.0)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            masks = make_masks(rng, len(idx), params, config.dropout_rate)
            loss, grads = loss_grad(params, X[idx], target[idx], w[idx], config.l2, task, masks)
            if not np.isfinite(loss):
                raise TrainingError("non-finite loss")
            opt.step(params, grads)
        if stopper is not None and stopper.update(epoch, monitor(params), params):
            break
    if stopper is not None and stopper.best_params is not None:
        return stopper.best_params
    return params


def _binary_weights(y, weights):
    if weights is None:
        return np.ones(len(y))
    if isinstance(weights, ClassWeights):
        return weights.per_sample(y)
    return np.asarray(weights, dtype=float)


def _check_binary(y):
    pos = np.asarray(y) >= 0.5
    if pos.all() or not pos.any():
        raise TrainingError("degenerate class: labels contain a single class")


def default_hidden(d: int) -> tuple[int, int]:
    return (1000, 100) if d >= 500 else (100, 10)


class _MLPBase(Model):
    def _z(self, X):
        X = self._check_input(X, 2, self.params["W1"].shape[0])
        return mlp_forward(self.params, X)[0]

    @classmethod
    def _fit(cls, X, y, w, task, hidden, config, monitor):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        rng = np.random.default_rng(config.seed)
        hidden = tuple(hidden) if hidden else default_hidden(X.shape[1])
        params = init_mlp(X.shape[1], hidden, rng)
        hp = {"hidden": list(hidden), "config": config.__dict__.copy()}
        watch = None
        if monitor is not None:
            def watch(p):
                return monitor(cls(hp, p))
        params = train_network(params, mlp_loss_grad, _mlp_masks, X, y, w, config, task,
                               rng, watch)
        return cls(hp, params)


@register
class MLPClassifier(_MLPBase):
    kind = "MLP"

    def predict_score(self, X) -> np.ndarray:
        return sigmoid(self._z(X))

    @classmethod
    def fit(cls, X, y, weights=None, hidden=None, config: TrainConfig = TrainConfig(),
            monitor=None) -> "MLPClassifier":
        _check_binary(y)
        return cls._fit(X, y, _binary_weights(y, weights), BINARY, hidden, config, monitor)


@register
class MLPRegressor(_MLPBase):
    kind = "MLPReg"
    task = "regression"

    def predict(self, X) -> np.ndarray:
        return self._z(X)

    @classmethod
    def fit(cls, X, y, hidden=None, config: TrainConfig = TrainConfig(),
            monitor=None) -> "MLPRegressor":
        return cls._fit(X, y, score_bin_weights(y), REGRESSION, hidden, config, monitor)


class _LSTMBase(Model):
    view = SEQ

    def _z(self, X):
        X = self._check_input(X, 3, self.params["Wx"].shape[0])
        return lstm_forward(self.params, X)[0]

    @classmethod
    def _fit(cls, X, y, w, task, hidden, config, monitor):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        rng = np.random.default_rng(config.seed)
        params = init_lstm(X.shape[2], hidden, rng)
        hp = {"hidden": int(hidden), "config": config.__dict__.copy()}
        watch = None
        if monitor is not None:
            def watch(p):
                return monitor(cls(hp, p))
        params = train_network(params, lstm_loss_grad, _lstm_mask, X, y, w, config, task,
                               rng, watch)
        return cls(hp, params)


@register
class LSTMClassifier(_LSTMBase):
    kind = "LSTM"

    def predict_score(self, X) -> np.ndarray:
        return sigmoid(self._z(X))

    @classmethod
    def fit(cls, X, y, weights=None, hidden: int = 16, config: TrainConfig = TrainConfig(),
            monitor=None) -> "LSTMClassifier":
        _check_binary(y)
        return cls._fit(X, y, _binary_weights(y, weights), BINARY, hidden, config, monitor)


@register
class LSTMRegressor(_LSTMBase):
    kind = "LSTMReg"
    task = "regression"

    def predict(self, X) -> np.ndarray:
        return self._z(X)

    @classmethod
    def fit(cls, X, y, hidden: int = 16, config: TrainConfig = TrainConfig(),
            monitor=None) -> "LSTMRegressor":
        return cls._fit(X, y, score_bin_weights(y), REGRESSION, hidden, config, monitor)
