"""Prediction-quality metrics. Variances use the population (1/n) convention."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from kinpred.errors import DegreesOfFreedomError, InvalidInputError, UndefinedError

SNR_CAP_DB = 60.0


def _pair(pred, ref):
    pred = np.asarray(pred, dtype=float).ravel()
    ref = np.asarray(ref, dtype=float).ravel()
    if len(pred) != len(ref) or len(pred) == 0:
        raise InvalidInputError(f"series lengths differ or are empty ({len(pred)} vs {len(ref)})")
    return pred, ref


def rmse(pred, ref) -> float:
    pred, ref = _pair(pred, ref)
    return float(np.sqrt(np.mean((pred - ref) ** 2)))


def pearson_r(pred, ref) -> float:
    pred, ref = _pair(pred, ref)
    dp = pred - pred.mean()
    dr = ref - ref.mean()
    sp = np.sqrt(np.mean(dp * dp))
    sr = np.sqrt(np.mean(dr * dr))
    if sp == 0 or sr == 0:
        raise UndefinedError("correlation undefined for a constant series")
    r = float(np.mean(dp * dr) / (sp * sr))
    return min(1.0, max(-1.0, r))


def snr_db(pred, ref) -> float:
    """``10 log10(var(ref) / MSE)``, capped at +60 dB. Not symmetric in its arguments."""
    pred, ref = _pair(pred, ref)
    var = float(np.var(ref))
    if var == 0:
        raise UndefinedError("SNR undefined for a constant reference")
    mse = float(np.mean((pred - ref) ** 2))
    if mse <= var * 10 ** (-SNR_CAP_DB / 10):
        return SNR_CAP_DB
    return float(10 * np.log10(var / mse))


def r_squared(pred, ref) -> float:
    pred, ref = _pair(pred, ref)
    ss_tot = float(np.sum((ref - ref.mean()) ** 2))
    if ss_tot == 0:
        raise UndefinedError("R^2 undefined for a constant reference")
    return 1.0 - float(np.sum((pred - ref) ** 2)) / ss_tot


def adjusted_r2(pred, ref, p: int) -> float:
    """R^2 penalised for ``p`` predictors: ``1 - (1 - R^2)(n - 1)/(n - p - 1)``."""
    pred, ref = _pair(pred, ref)
    n = len(ref)
    if n <= p + 1:
        raise DegreesOfFreedomError(f"n={n} samples cannot support p={p} predictors")
    return 1.0 - (1.0 - r_squared(pred, ref)) * (n - 1) / (n - p - 1)


@dataclass(frozen=True)
class MetricSet:
    rmse: float
    r: float
    snr_db: float
    adj_r2: float

    def as_dict(self) -> dict:
        return asdict(self)


METRICS = ("rmse", "r", "snr_db", "adj_r2")


def metric_set(pred, ref, p: int) -> MetricSet:
    """All four metrics; statistics undefined on the data come back as NaN."""

    def safe(fn, *args):
        try:
            return fn(*args)
        except (UndefinedError, DegreesOfFreedomError):
            return float("nan")

    return MetricSet(
        rmse=rmse(pred, ref),
        r=safe(pearson_r, pred, ref),
        snr_db=safe(snr_db, pred, ref),
        adj_r2=safe(adjusted_r2, pred, ref, p),
    )
