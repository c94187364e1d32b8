import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import brute_force_anova
from metareg.stats import (
    ZeroVarianceError, betainc, corr_significance, f_cdf, paired_ttest, pearson,
    rm_anova_2way, anova_total_ss, summarize, t_cdf,
)

# two-tailed p-values from numerical integration of the t density (mpmath, 30 digits)
P_R02322_DF110 = 0.0137558659702412855
P_R01068_DF110 = 0.2623754823361756682
P_T3464_DF2 = 0.0741799002274485384


def brute_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def test_pearson_examples():
    x = [1.0, 2.0, 5.0, 7.0]
    assert pearson(x, x) == pytest.approx(1.0, abs=1e-12)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)
    assert brute_pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)


def test_pearson_errors():
    with pytest.raises(ZeroVarianceError, match="zero variance"):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1, 2, 3], [1, 2])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(-5, 5))
def test_pearson_affine_invariance(seed, scale, shift):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 12))
    r = pearson(x, y)
    assert pearson(scale * x + shift, y) == pytest.approx(r, abs=1e-10)
    assert pearson(x, scale * y + shift) == pytest.approx(r, abs=1e-10)
    assert pearson(-x, y) == -r
    assert r == pytest.approx(brute_pearson(list(x), list(y)), abs=1e-12)


def test_t_cdf_closed_forms():
    assert t_cdf(0.0, 7) == 0.5
    assert t_cdf(1.0, 1) == pytest.approx(0.75, abs=1e-12)
    for x in (-3.0, -0.4, 0.7, 2.5, 40.0):
        assert t_cdf(x, 1) == pytest.approx(0.5 + math.atan(x) / math.pi, abs=1e-12)
        assert t_cdf(x, 2) == pytest.approx(0.5 + x / (2 * math.sqrt(2 + x * x)), abs=1e-12)


@pytest.mark.parametrize("df", [1, 3, 10, 110, 1000])
def test_t_cdf_symmetry(df):
    for x in (0.01, 0.5, 1.96, 4.0, 12.0):
        assert t_cdf(x, df) + t_cdf(-x, df) == pytest.approx(1.0, abs=1e-12)


def test_f_cdf():
    for d in (1, 2, 5, 17, 200):
        assert f_cdf(1.0, d, d) == pytest.approx(0.5, abs=1e-12)
    # F(1, d) is the square of t(d)
    for x in (0.3, 2.0, 10.49):
        assert f_cdf(x, 1, 7) == pytest.approx(2 * t_cdf(math.sqrt(x), 7) - 1, abs=1e-12)
    # F(2, d2) has the closed form 1 - (1 + 2x/d2)^(-d2/2)
    assert f_cdf(3.0, 2, 6) == pytest.approx(1 - (1 + 1.0) ** -3, abs=1e-12)


def test_betainc_edges_and_invalid():
    assert betainc(2.0, 3.0, 0.0) == 0.0
    assert betainc(2.0, 3.0, 1.0) == 1.0
    # I_x(1, 1) = x and I_x(a, 1) = x^a
    assert betainc(1.0, 1.0, 0.37) == pytest.approx(0.37, abs=1e-14)
    assert betainc(3.5, 1.0, 0.6) == pytest.approx(0.6 ** 3.5, abs=1e-14)
    with pytest.raises(ValueError):
        t_cdf(1.0, 0)


def test_corr_significance_reported_values():
    res = corr_significance(0.2322, 112)
    assert res.df == 110
    assert res.t_stat == pytest.approx(0.2322 * math.sqrt(110 / (1 - 0.2322 ** 2)), rel=1e-14)
    assert res.p_two_tailed == pytest.approx(P_R02322_DF110, abs=1e-10)
    res = corr_significance(0.1068, 112)
    assert res.p_two_tailed == pytest.approx(P_R01068_DF110, abs=1e-10)
    assert res.p_two_tailed > 0.05


def test_corr_significance_edges():
    res = corr_significance(0.0, 30)
    assert res.t_stat == 0.0 and res.p_two_tailed == 1.0
    res = corr_significance(1.0, 30)
    assert res.p_two_tailed == 0.0 and res.t_stat == math.inf


def test_corr_significance_monotone_in_r():
    for n in (6, 30, 112):
        ps = [corr_significance(r, n).p_two_tailed for r in np.linspace(0.0, 0.95, 40)]
        assert all(b < a for a, b in zip(ps, ps[1:]))


def test_paired_ttest_examples():
    res = paired_ttest([1, 2, 3], [0, 0, 0])
    assert res.t == pytest.approx(2 / (1 / math.sqrt(3)), rel=1e-12)
    assert res.t == pytest.approx(3.4641, abs=1e-4)
    assert res.p == pytest.approx(P_T3464_DF2, abs=1e-10)
    same = paired_ttest([0.3, 0.1, 0.2], [0.3, 0.1, 0.2])
    assert (same.t, same.p, same.degenerate) == (0.0, 1.0, True)
    shifted = paired_ttest([1.5, 2.5, 3.5], [1.0, 2.0, 3.0])
    assert shifted.degenerate


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_paired_ttest_antisymmetric(seed):
    a, b = np.random.default_rng(seed).normal(size=(2, 8))
    ab, ba = paired_ttest(a, b), paired_ttest(b, a)
    assert ab.t == -ba.t
    assert ab.p == ba.p


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_rm_anova_matches_brute_force(seed):
    y = np.random.default_rng(seed).normal(size=(4, 2, 3))
    res = rm_anova_2way(y)
    F = brute_force_anova(y)
    assert [r.effect_name for r in res] == ["method", "algorithm", "method:algorithm"]
    for r, key in zip(res, ["a", "b", "ab"]):
        assert abs(r.F - F[key]) < 1e-9
    assert (res[0].df_num, res[0].df_den) == (1, 3)
    assert (res[1].df_num, res[1].df_den) == (2, 6)
    assert (res[2].df_num, res[2].df_den) == (2, 6)
    for r in res:
        assert r.p == pytest.approx(1 - f_cdf(r.F, r.df_num, r.df_den), abs=1e-12)


def test_rm_anova_against_statsmodels():
    pd = pytest.importorskip("pandas")
    from statsmodels.stats.anova import AnovaRM

    y = np.random.default_rng(5).normal(size=(8, 2, 5))
    rows = [{"fold": i, "method": j, "algo": k, "r": y[i, j, k]}
            for i in range(8) for j in range(2) for k in range(5)]
    table = AnovaRM(pd.DataFrame(rows), "r", "fold", within=["method", "algo"]).fit().anova_table
    ours = rm_anova_2way(y)
    assert ours[0].F == pytest.approx(table.loc["method", "F Value"], rel=1e-9)
    assert ours[1].F == pytest.approx(table.loc["algo", "F Value"], rel=1e-9)
    assert ours[2].F == pytest.approx(table.loc["method:algo", "F Value"], rel=1e-9)
    assert (ours[0].df_num, ours[0].df_den) == (1, 7)
    assert ours[0].p == pytest.approx(table.loc["method", "Pr > F"], abs=1e-10)


def test_rm_anova_identical_methods():
    base = np.random.default_rng(3).normal(size=(5, 1, 3))
    y = np.concatenate([base, base], axis=1)
    method = rm_anova_2way(y)[0]
    assert method.F == pytest.approx(0.0, abs=1e-12)
    assert method.p == pytest.approx(1.0, abs=1e-12)


def test_rm_anova_sum_of_squares_conserved():
    y = np.random.default_rng(11).normal(size=(6, 2, 4))
    total, parts = anova_total_ss(y)
    assert total == pytest.approx(parts, abs=1e-9)


def test_rm_anova_errors():
    with pytest.raises(ValueError):
        rm_anova_2way(np.zeros((1, 2, 2)))
    y = np.ones((3, 2, 2))
    y[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="missing"):
        rm_anova_2way(y)


def test_summarize():
    rep = summarize([(0, "b", 0.2), (1, "b", 0.4), (0, "a", 0.5)])
    assert list(rep.summary) == ["a", "b"]
    assert rep.summary["b"]["mean"] == pytest.approx(0.3)
    assert rep.summary["b"]["sd"] == pytest.approx(math.sqrt(0.02), abs=1e-12)
    assert rep.summary["b"]["sd"] == pytest.approx(0.1414, abs=1e-4)
    assert rep.summary["a"]["sd"] == 0.0 and rep.summary["a"]["singleton"]


def test_summarize_missing_r_is_not_zero():
    rep = summarize([(0, "x", None), (1, "x", 0.6), (2, "x", 0.2)])
    assert rep.summary["x"]["n_missing"] == 1
    assert rep.summary["x"]["mean"] == pytest.approx(0.4)
    assert rep.to_csv().splitlines()[1] == "0,x,"
