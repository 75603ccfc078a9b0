"""One-way ANOVA with F-distribution tail probabilities from the regularised
incomplete beta function."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from kinpred.errors import InvalidInputError, UndefinedError

ALPHA = 0.05


def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 3e-16) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """``I_x(a, b)`` for ``a, b > 0`` and ``0 <= x <= 1``."""
    if a <= 0 or b <= 0:
        raise InvalidInputError("betainc needs a, b > 0")
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_sf(F: float, d1: float, d2: float) -> float:
    """Upper-tail probability ``P(X > F)`` for ``X ~ F(d1, d2)``."""
    if F <= 0:
        return 1.0
    if math.isinf(F):
        return 0.0
    return betainc_regularized(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * F))


def anova_oneway(groups: Sequence[Sequence[float]]):
    """Between/within mean-square ratio and its p value -> ``(F, p)``."""
    arrs = [np.asarray(g, dtype=float).ravel() for g in groups]
    if len(arrs) < 2 or any(len(a) < 2 for a in arrs):
        raise InvalidInputError("ANOVA needs >= 2 groups of >= 2 observations")
    n = sum(len(a) for a in arrs)
    k = len(arrs)
    grand = sum(a.sum() for a in arrs) / n
    ss_between = sum(len(a) * (a.mean() - grand) ** 2 for a in arrs)
    ss_within = sum(((a - a.mean()) ** 2).sum() for a in arrs)
    df_b, df_w = k - 1, n - k
    # relative scale for "exactly zero" spread
    scale = max(1.0, max(float(np.max(np.abs(a))) for a in arrs)) ** 2 * n * 1e-28
    if ss_within <= scale:
        if ss_between <= scale:
            raise UndefinedError("ANOVA degenerate: no variance within or between groups")
        return math.inf, 0.0
    F = (ss_between / df_b) / (ss_within / df_w)
    return float(F), f_sf(F, df_b, df_w)
