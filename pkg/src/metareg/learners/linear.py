"""Linear learners: logistic regression, Pegasos SVM, ridge and linear SVR."""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

from ..errors import TrainingError
from .base import Model, register
from .common import ClassWeights, sigmoid


def _sample_weights(y, weights) -> np.ndarray:
    if weights is None:
        return np.ones(len(y))
    if isinstance(weights, ClassWeights):
        return weights.per_sample(y)
    return np.asarray(weights, dtype=float)


def _check_two_classes(y) -> None:
    y = np.asarray(y)
    n_pos = int(np.sum(y >= 0.5))
    if n_pos == 0 or n_pos == y.size:
        raise TrainingError("degenerate class: labels contain a single class")


@register
class LogisticRegression(Model):
    kind = "LR"

    def predict_score(self, X) -> np.ndarray:
        w = self.params["w"]
        X = self._check_input(X, 2, w.size)
        return sigmoid(X @ w + self.params["b"])

    @classmethod
    def fit(cls, X, y, weights=None, l2: float = 1e-2, max_iter: int = 500,
            seed: int = 0) -> "LogisticRegression":
        """l2-regularized weighted logistic regression.

        Minimizes mean(w_i * BCE_i) + l2/2 * ||w||^2 (bias unpenalized) with
        L-BFGS on the analytic gradient.
        """
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        _check_two_classes(y)
        sw = _sample_weights(y, weights)
        n, d = X.shape

        def objective(theta):
            w, b = theta[:d], theta[d]
            z = X @ w + b
            # softplus(z) - y z is BCE on logits, stable for large |z|
            loss = np.mean(sw * (np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * (w @ w)
            dz = sw * (sigmoid(z) - y) / n
            grad = np.empty(d + 1)
            grad[:d] = X.T @ dz + l2 * w
            grad[d] = dz.sum()
            return loss, grad

        res = minimize(objective, np.zeros(d + 1), jac=True, method="L-BFGS-B",
                       options={"maxiter": max_iter})
        if not np.all(np.isfinite(res.x)) or not np.isfinite(res.fun):
            raise TrainingError("non-finite loss in logistic regression")
        return cls({"l2": l2, "max_iter": max_iter},
                   {"w": res.x[:d].copy(), "b": np.asarray(res.x[d])})


def _pegasos(X, target, sw, lam, epochs, batch_size, rng, loss, epsilon=0.0):
    """Mini-batch Pegasos on an appended bias column; returns averaged weights.

    ``loss`` is "hinge" (targets +-1) or "epsilon" (real targets).
    """
    n, d = X.shape
    Xb = np.hstack([X, np.ones((n, 1))])
    w = np.zeros(d + 1)
    avg = np.zeros(d + 1)
    n_avg = 0
    radius = 1.0 / np.sqrt(lam)
    t = 0
    total_steps = epochs * int(np.ceil(n / batch_size))
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            t += 1
            eta = 1.0 / (lam * t)
            xb = Xb[idx]
            pred = xb @ w
            if loss == "hinge":
                active = target[idx] * pred < 1.0
                coef = sw[idx] * target[idx] * active
            else:
                resid = target[idx] - pred
                coef = sw[idx] * np.sign(resid) * (np.abs(resid) > epsilon)
            w *= 1.0 - eta * lam
            w += (eta / len(idx)) * (coef @ xb)
            norm = np.sqrt(w @ w)
            if norm > radius:
                w *= radius / norm
            # average the second half of the iterates
            if t > total_steps // 2:
                avg += w
                n_avg += 1
    if not np.all(np.isfinite(w)):
        raise TrainingError("non-finite weights in subgradient solver")
    return avg / max(n_avg, 1)


@register
class LinearSVM(Model):
    """Linear SVM; scores are logistic(margin) on inputs divided by ``scale``."""

    kind = "LinearSVM"

    def margin(self, X) -> np.ndarray:
        w = self.params["w"]
        X = self._check_input(X, 2, w.size)
        return (X / self.hyperparams["scale"]) @ w + self.params["b"]

    def predict_score(self, X) -> np.ndarray:
        return sigmoid(self.margin(X))

    @classmethod
    def fit(cls, X, y, weights=None, C: float = 1.0, scale: float = 1.0,
            epochs: int = 30, batch_size: int = 32, seed: int = 0) -> "LinearSVM":
        """Weighted hinge loss + l2 in the primal; lambda = 1 / (C n)."""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        _check_two_classes(y)
        if C <= 0 or scale <= 0:
            raise TrainingError("C and scale must be positive")
        sw = _sample_weights(y, weights)
        target = np.where(y >= 0.5, 1.0, -1.0)
        rng = np.random.default_rng(seed)
        lam = 1.0 / (C * len(y))
        wb = _pegasos(X / scale, target, sw, lam, epochs, batch_size, rng, "hinge")
        return cls({"C": C, "scale": scale, "epochs": epochs, "batch_size": batch_size},
                   {"w": wb[:-1].copy(), "b": np.asarray(wb[-1])})


@register
class LinearRegression(Model):
    kind = "LinearRegression"
    task = "regression"

    def predict(self, X) -> np.ndarray:
        w = self.params["w"]
        X = self._check_input(X, 2, w.size)
        return X @ w + self.params["b"]

    @classmethod
    def fit(cls, X, y, l2: float = 0.0, seed: int = 0) -> "LinearRegression":
        """Least squares with ridge penalty n * l2 * ||w||^2; intercept unpenalized."""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, d = X.shape
        xm = X.mean(axis=0)
        ym = y.mean()
        Xc = X - xm
        yc = y - ym
        if l2 > 0:
            A = np.vstack([Xc, np.sqrt(n * l2) * np.eye(d)])
            rhs = np.concatenate([yc, np.zeros(d)])
        else:
            A, rhs = Xc, yc
        w, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        if not np.all(np.isfinite(w)):
            raise TrainingError("non-finite least-squares solution")
        return cls({"l2": l2}, {"w": w, "b": np.asarray(ym - xm @ w)})


@register
class LinearSVR(Model):
    kind = "LinearSVR"
    task = "regression"

    def predict(self, X) -> np.ndarray:
        w = self.params["w"]
        X = self._check_input(X, 2, w.size)
        return (X / self.hyperparams["scale"]) @ w + self.params["b"]

    @classmethod
    def fit(cls, X, y, C: float = 1.0, scale: float = 1.0, epsilon: float = 0.1,
            epochs: int = 30, batch_size: int = 32, seed: int = 0) -> "LinearSVR":
        """Epsilon-insensitive loss + l2, solved like the SVM on centred targets."""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if C <= 0 or scale <= 0:
            raise TrainingError("C and scale must be positive")
        offset = float(y.mean())
        rng = np.random.default_rng(seed)
        lam = 1.0 / (C * len(y))
        wb = _pegasos(X / scale, y - offset, np.ones(len(y)), lam, epochs, batch_size,
                      rng, "epsilon", epsilon)
        return cls({"C": C, "scale": scale, "epsilon": epsilon, "epochs": epochs,
                    "batch_size": batch_size},
                   {"w": wb[:-1].copy(), "b": np.asarray(wb[-1] + offset)})
