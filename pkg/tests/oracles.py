"""Independent reference computations used by the tests.

Everything here is written with plain Python loops or closed forms so it
shares no code path with the package under test.
"""

import math


def rmse(pred, ref):
    n = len(ref)
    return math.sqrt(sum((p - r) ** 2 for p, r in zip(pred, ref)) / n)


def _mean(x):
    return sum(x) / len(x)


def pearson_r(pred, ref):
    mp, mr = _mean(pred), _mean(ref)
    cov = sum((p - mp) * (r - mr) for p, r in zip(pred, ref))
    vp = sum((p - mp) ** 2 for p in pred)
    vr = sum((r - mr) ** 2 for r in ref)
    return cov / math.sqrt(vp * vr)


def snr_db(pred, ref):
    mr = _mean(ref)
    var = sum((r - mr) ** 2 for r in ref) / len(ref)
    mse = sum((p - r) ** 2 for p, r in zip(pred, ref)) / len(ref)
    return 10 * math.log10(var / mse)


def adjusted_r2(pred, ref, p):
    n = len(ref)
    mr = _mean(ref)
    ss_tot = sum((r - mr) ** 2 for r in ref)
    ss_res = sum((a - r) ** 2 for a, r in zip(pred, ref))
    r2 = 1 - ss_res / ss_tot
    return 1 - (1 - r2) * (n - 1) / (n - p - 1)


def anova_f(groups):
    allv = [v for g in groups for v in g]
    grand = _mean(allv)
    k, n = len(groups), len(allv)
    ssb = sum(len(g) * (_mean(g) - grand) ** 2 for g in groups)
    ssw = sum(sum((v - _mean(g)) ** 2 for v in g) for g in groups)
    return (ssb / (k - 1)) / (ssw / (n - k))


def butterworth_gain_db(f, fc, order):
    """Analytic analog prototype magnitude ``10 log10(1 / (1 + (f/fc)^(2n)))``."""
    return -10 * math.log10(1 + (f / fc) ** (2 * order))


def window_count_naive(n, window=165, hop=15):
    count, start = 0, 0
    while start + window <= n:
        count += 1
        start += hop
    return count


def zero_crossings_naive(x, eps):
    def sgn(v):
        return int(v > 0) - int(v < 0)

    return sum(1 for a, b in zip(x[:-1], x[1:]) if sgn(a) != sgn(b) and abs(a - b) >= eps)


def slope_sign_changes_naive(x, eps):
    c = 0
    for i in range(1, len(x) - 1):
        d1, d2 = x[i] - x[i - 1], x[i] - x[i + 1]
        if d1 * d2 > 0 and max(abs(d1), abs(d2)) >= eps:
            c += 1
    return c
