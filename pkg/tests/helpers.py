"""Shared test utilities: finite-difference gradients, ANOVA oracle, toy data."""

import itertools

import numpy as np

# "A#: PASS/FAIL" lines from the acceptance suite, repeated in the terminal summary.
ACCEPTANCE_LINES = []


def numeric_grad(f, params, step=1e-5):
    """Central differences of scalar ``f(params)`` for every entry of every tensor."""
    grads = {}
    for key, value in params.items():
        g = np.zeros_like(value, dtype=float)
        flat = value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f(params)
            flat[i] = orig - step
            down = f(params)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        grads[key] = g
    return grads


def max_rel_error(analytic, numeric, floor=1e-8):
    """Largest elementwise |a - n| / max(|a|, |n|, floor) over all tensors."""
    worst = 0.0
    for key in numeric:
        a = np.asarray(analytic[key], dtype=float)
        n = numeric[key]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def separable_2d(n=40, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(float)
    X = X + np.where(y[:, None] > 0, 0.5, -0.5) * np.array([1.0, 0.5])
    return X, y


def brute_force_anova(y):
    """Sums of squares by explicit loops over cells, from the effect definitions."""
    s, a, b = y.shape
    cells = list(itertools.product(range(s), range(a), range(b)))
    grand = sum(y[c] for c in cells) / len(cells)

    def mean_over(fixed):
        sel = [y[c] for c in cells if all(c[i] == v for i, v in fixed.items())]
        return sum(sel) / len(sel)

    ms = {i: mean_over({0: i}) for i in range(s)}
    ma = {j: mean_over({1: j}) for j in range(a)}
    mb = {k: mean_over({2: k}) for k in range(b)}
    msa = {(i, j): mean_over({0: i, 1: j}) for i in range(s) for j in range(a)}
    msb = {(i, k): mean_over({0: i, 2: k}) for i in range(s) for k in range(b)}
    mab = {(j, k): mean_over({1: j, 2: k}) for j in range(a) for k in range(b)}
    ss = dict.fromkeys(["a", "b", "ab", "as", "bs", "abs"], 0.0)
    for i, j, k in cells:
        ss["a"] += (ma[j] - grand) ** 2
        ss["b"] += (mb[k] - grand) ** 2
        ss["ab"] += (mab[j, k] - ma[j] - mb[k] + grand) ** 2
        ss["as"] += (msa[i, j] - ms[i] - ma[j] + grand) ** 2
        ss["bs"] += (msb[i, k] - ms[i] - mb[k] + grand) ** 2
        ss["abs"] += (y[i, j, k] - msa[i, j] - msb[i, k] - mab[j, k]
                      + ms[i] + ma[j] + mb[k] - grand) ** 2
    F = {
        "a": (ss["a"] / (a - 1)) / (ss["as"] / ((a - 1) * (s - 1))),
        "b": (ss["b"] / (b - 1)) / (ss["bs"] / ((b - 1) * (s - 1))),
        "ab": (ss["ab"] / ((a - 1) * (b - 1))) / (ss["abs"] / ((a - 1) * (b - 1) * (s - 1))),
    }
    return F
