"""Evaluation statistics: correlation, paired t-test, repeated-measures ANOVA.

The t and F distribution functions are built on a continued-fraction
evaluation of the regularized incomplete beta function so the module has
no dependency beyond numpy.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

_BETA_EPS = 1e-15
_BETA_TINY = 1e-300
_BETA_MAXITER = 300


def _beta_cf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETA_TINY:
        d = _BETA_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAXITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_TINY:
            d = _BETA_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETA_TINY:
            c = _BETA_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_TINY:
            d = _BETA_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETA_TINY:
            c = _BETA_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc requires a > 0 and b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # the fraction converges fast only on one side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def t_cdf(x: float, df: float) -> float:
    """Student t cumulative distribution function."""
    if not df >= 1:
        raise ValueError(f"invalid degrees of freedom: {df}")
    if math.isinf(x):
        return 1.0 if x > 0 else 0.0
    if x == 0.0:
        return 0.5
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + x * x))
    return 1.0 - tail if x > 0 else tail


def t_sf_two_tailed(t: float, df: float) -> float:
    """Two-tailed p-value for a t statistic, computed without cancellation."""
    if not df >= 1:
        raise ValueError(f"invalid degrees of freedom: {df}")
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def f_cdf(x: float, d1: float, d2: float) -> float:
    """F distribution cumulative distribution function."""
    if not (d1 >= 1 and d2 >= 1):
        raise ValueError(f"invalid degrees of freedom: ({d1}, {d2})")
    if x <= 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    return betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2))


def f_sf(x: float, d1: float, d2: float) -> float:
    if not (d1 >= 1 and d2 >= 1):
        raise ValueError(f"invalid degrees of freedom: ({d1}, {d2})")
    if x <= 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    return betainc(d2 / 2.0, d1 / 2.0, d2 / (d1 * x + d2))


class ZeroVarianceError(ValueError):
    pass


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Product-moment correlation between two equal-length vectors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 3:
        raise ValueError("pearson needs at least 3 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVarianceError("zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    n: int
    df: int
    t_stat: float
    p_two_tailed: float


def corr_significance(r: float, n: int) -> CorrelationResult:
    """t-test of H0: rho = 0 for a sample correlation r over n pairs (df = n - 2)."""
    if n < 4:
        raise ValueError("corr_significance needs n >= 4")
    if not -1.0 <= r <= 1.0:
        raise ValueError(f"correlation out of range: {r}")
    df = n - 2
    if abs(r) == 1.0:
        return CorrelationResult(r, n, df, math.copysign(math.inf, r), 0.0)
    t = r * math.sqrt(df / (1.0 - r * r))
    return CorrelationResult(r, n, df, t, t_sf_two_tailed(t, df))


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int
    degenerate: bool = False


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Paired two-tailed t-test on the differences a - b.

    All-zero differences give t = 0, p = 1 with ``degenerate`` set; a nonzero
    constant shift has no variance and is likewise flagged, with an infinite t
    and p = 0.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("paired_ttest needs at least 2 pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, df, degenerate=True)
        return TTestResult(math.copysign(math.inf, mean), 0.0, df, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, t_sf_two_tailed(t, df), df)


@dataclass(frozen=True)
class AnovaResult:
    effect_name: str
    F: float
    df_num: int
    df_den: int
    p: float
    ss_effect: float
    ss_error: float


def rm_anova_2way(
    data: np.ndarray,
    factor_names: tuple[str, str] = ("method", "algorithm"),
) -> list[AnovaResult]:
    """Two-way repeated-measures ANOVA with subjects on axis 0.

    ``data`` has shape (subjects, levels_a, levels_b); here the subjects are
    cross-validation folds. Each effect is tested against its own
    effect-by-subject interaction. No sphericity correction is applied.
    """
    y = np.asarray(data, dtype=float)
    if y.ndim != 3:
        raise ValueError("data must be a 3-D array (subjects, a, b)")
    s, a, b = y.shape
    if s < 2:
        raise ValueError("need at least 2 subjects")
    if a < 2 or b < 2:
        raise ValueError("each factor needs at least 2 levels")
    if not np.all(np.isfinite(y)):
        raise ValueError("missing cells in repeated-measures design")

    grand = y.mean()
    m_s = y.mean(axis=(1, 2))
    m_a = y.mean(axis=(0, 2))
    m_b = y.mean(axis=(0, 1))
    m_sa = y.mean(axis=2)
    m_sb = y.mean(axis=1)
    m_ab = y.mean(axis=0)

    ss_a = s * b * np.sum((m_a - grand) ** 2)
    ss_b = s * a * np.sum((m_b - grand) ** 2)
    ss_ab = s * np.sum((m_ab - m_a[:, None] - m_b[None, :] + grand) ** 2)
    ss_as = b * np.sum((m_sa - m_s[:, None] - m_a[None, :] + grand) ** 2)
    ss_bs = a * np.sum((m_sb - m_s[:, None] - m_b[None, :] + grand) ** 2)
    resid = (
        y
        - m_sa[:, :, None] - m_sb[:, None, :] - m_ab[None, :, :]
        + m_s[:, None, None] + m_a[None, :, None] + m_b[None, None, :]
        - grand
    )
    ss_abs = np.sum(resid ** 2)

    fa, fb = factor_names
    terms = [
        (fa, ss_a, a - 1, ss_as, (a - 1) * (s - 1)),
        (fb, ss_b, b - 1, ss_bs, (b - 1) * (s - 1)),
        (f"{fa}:{fb}", ss_ab, (a - 1) * (b - 1), ss_abs, (a - 1) * (b - 1) * (s - 1)),
    ]
    # sums of squares at rounding-noise level relative to the total count as zero
    negligible = 1e-12 * float(np.sum((y - grand) ** 2))
    out = []
    for name, ss_eff, df_num, ss_err, df_den in terms:
        if ss_eff <= negligible:
            F = 0.0
        elif ss_err <= negligible:
            F = math.inf
        else:
            F = (ss_eff / df_num) / (ss_err / df_den)
        out.append(AnovaResult(name, float(F), df_num, df_den, f_sf(F, df_num, df_den),
                               float(ss_eff), float(ss_err)))
    return out


def anova_total_ss(data: np.ndarray) -> tuple[float, float]:
    """Return (total SS, sum of component SS) for the conservation check."""
    y = np.asarray(data, dtype=float)
    s, a, b = y.shape
    total = float(np.sum((y - y.mean()) ** 2))
    m_s = y.mean(axis=(1, 2))
    ss_s = a * b * float(np.sum((m_s - y.mean()) ** 2))
    parts = rm_anova_2way(y)
    return total, ss_s + sum(p.ss_effect + p.ss_error for p in parts)


@dataclass
class EvalReport:
    """Per-fold correlations, per-tag summaries and attached test outputs."""

    per_fold: list[tuple[int, str, float | None]]
    summary: dict[str, dict] = field(default_factory=dict)
    tests: list[dict] = field(default_factory=list)
    predictions: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = ["fold,tag,r"]
        for fold, tag, r in self.per_fold:
            lines.append(f"{fold},{tag},{'' if r is None else repr(float(r))}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {"summary": self.summary, "tests": self.tests}, indent=2, sort_keys=True
        )


def summarize(
    per_fold: Iterable[tuple[int, str, float | None]],
    tests: Sequence[dict] = (),
) -> EvalReport:
    """Mean and sample SD of r per tag; missing r values are counted, not used."""
    rows = list(per_fold)
    by_tag: dict[str, list[float | None]] = {}
    for _, tag, r in rows:
        by_tag.setdefault(tag, []).append(r)
    summary = {}
    for tag in sorted(by_tag):
        vals = [v for v in by_tag[tag] if v is not None and math.isfinite(v)]
        n = len(vals)
        entry = {
            "n": n,
            "n_missing": len(by_tag[tag]) - n,
            "mean": float(np.mean(vals)) if n else None,
            "sd": float(np.std(vals, ddof=1)) if n > 1 else (0.0 if n == 1 else None),
            "singleton": n == 1,
        }
        summary[tag] = entry
    return EvalReport(rows, summary, list(tests))


def result_dict(result) -> dict:
    """Serialize a result dataclass to JSON-safe primitives."""
    d = asdict(result)
    for k, v in d.items():
        if isinstance(v, float) and not math.isfinite(v):
            d[k] = "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return d
