"""Paired t-test, one-way ANOVA with Bonferroni pairwise follow-ups.

Test statistics are computed directly from their definitions; tail
probabilities go through the regularized incomplete beta function.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import betainc


def t_two_sided_p(t: float, df: int) -> float:
    x = df / (df + t * t)
    return float(betainc(df / 2.0, 0.5, x))


def f_sf(f: float, df1: int, df2: int) -> float:
    if f <= 0:
        return 1.0
    x = df2 / (df2 + df1 * f)
    return float(betainc(df2 / 2.0, df1 / 2.0, x))


def paired_t_test(a, b) -> dict:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be equal-length vectors, got {a.shape}, {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("need at least two pairs")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0:
        raise ValueError("difference variance is zero; t statistic undefined")
    t = float(d.mean() / (sd / math.sqrt(n)))
    df = n - 1
    return {"t": t, "df": df, "p_two_sided": t_two_sided_p(t, df)}


def unpaired_t_test(a, b) -> dict:
    """Pooled-variance two-sample t, the ANOVA follow-up flavor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ValueError("each sample needs at least two values")
    df = na + nb - 2
    pooled = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / df
    if pooled == 0:
        raise ValueError("pooled variance is zero; t statistic undefined")
    t = float((a.mean() - b.mean()) / math.sqrt(pooled * (1 / na + 1 / nb)))
    return {"t": t, "df": df, "p_two_sided": t_two_sided_p(t, df)}


def one_way_anova(groups: list) -> dict:
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    if any(g.size < 2 for g in groups):
        raise ValueError("each group needs at least two samples")
    k = len(groups)
    n_total = sum(g.size for g in groups)
    grand = np.concatenate(groups).mean()
    ss_between = sum(g.size * (g.mean() - grand) ** 2 for g in groups)
    ss_within = sum(float(((g - g.mean()) ** 2).sum()) for g in groups)
    df_between = k - 1
    df_within = n_total - k
    if ss_within == 0:
        raise ValueError("zero within-group variance; F statistic undefined")
    f = float((ss_between / df_between) / (ss_within / df_within))
    pairwise = []
    n_comparisons = k * (k - 1) // 2
    for i in range(k):
        for j in range(i + 1, k):
            test = unpaired_t_test(groups[i], groups[j])
            test.update(
                pair=(i, j),
                p_bonferroni=min(1.0, test["p_two_sided"] * n_comparisons),
            )
            pairwise.append(test)
    return {
        "F": f,
        "df_between": df_between,
        "df_within": df_within,
        "p": f_sf(f, df_between, df_within),
        "pairwise": pairwise,
    }


def mean_sem(samples) -> dict:
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.size
    sem = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return {"mean": float(samples.mean()), "sem": sem, "n": int(n)}
