"""Sliding-window segmentation, time-domain EMG features, feature-vector
assembly and look-ahead labelling."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from kinpred.errors import EmptyResultError, InvalidInputError, InvalidParameterError
from kinpred.signals import EMG_CHANNELS, EMG_RATE, TimeSeries, sample_many

WINDOW = int(round(0.1485 * EMG_RATE))  # 165 samples, 148.5 ms
HOP = int(round(0.0135 * EMG_RATE))  # 15 samples, 13.5 ms
N_FT = 4
PREDICTION_TIMES = (0.027, 0.054, 0.081, 0.108, 0.135, 0.162)

MODES = ("FT", "FL", "FTL", "KIN")


def feature_width(mode: str, channels: int = EMG_CHANNELS) -> int:
    """Vector length including the trailing knee angle."""
    widths = {
        "FT": N_FT * channels + 1,
        "FL": channels + 1,
        "FTL": (N_FT + 1) * channels + 1,
        "KIN": 1,
    }
    try:
        return widths[mode]
    except KeyError:
        raise InvalidParameterError(f"unknown feature mode {mode!r}") from None


def uses_ft(mode: str) -> bool:
    return mode in ("FT", "FTL")


def uses_fl(mode: str) -> bool:
    return mode in ("FL", "FTL")


@dataclass(frozen=True, eq=False)
class Window:
    samples: np.ndarray  # (WINDOW, channels)
    end_time: float


@dataclass(frozen=True, eq=False)
class Windows:
    """All windows of a recording as a ``(K, WINDOW, channels)`` view."""

    samples: np.ndarray
    end_times: np.ndarray

    def __len__(self):
        return len(self.end_times)

    def __getitem__(self, k) -> Window:
        return Window(self.samples[k], float(self.end_times[k]))


def window_count(n_samples: int, window: int = WINDOW, hop: int = HOP) -> int:
    if n_samples < window:
        return 0
    return (n_samples - window) // hop + 1


def segment_windows(emg: TimeSeries, window: int = WINDOW, hop: int = HOP) -> Windows:
    n = window_count(len(emg), window, hop)
    if n == 0:
        raise EmptyResultError(f"{len(emg)} samples cannot hold a {window}-sample window")
    view = np.lib.stride_tricks.sliding_window_view(emg.values, window, axis=0)
    samples = np.swapaxes(view[::hop][:n], 1, 2)
    ends = emg.start_time + (np.arange(n) * hop + window - 1) / emg.rate
    return Windows(samples, ends)


# -- time-domain features ----------------------------------------------------
# Each reduces along ``axis`` (time); ``eps`` broadcasts against the remaining axes.

def _arr(x, min_len, axis, name):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[axis] < min_len:
        raise InvalidInputError(f"{name} needs at least {min_len} samples")
    return x


def mav(x, axis: int = 0):
    x = _arr(x, 1, axis, "mav")
    return np.mean(np.abs(x), axis=axis)


def zero_crossings(x, eps=0.0, axis: int = 0):
    x = _arr(x, 1, axis, "zero_crossings")
    a = np.moveaxis(x, axis, -1)
    sign_change = np.sign(a[..., :-1]) != np.sign(a[..., 1:])
    big = np.abs(a[..., :-1] - a[..., 1:]) >= np.asarray(eps, float)[..., None]
    return np.sum(sign_change & big, axis=-1)


def slope_sign_changes(x, eps=0.0, axis: int = 0):
    x = _arr(x, 3, axis, "slope_sign_changes")
    a = np.moveaxis(x, axis, -1)
    left = a[..., 1:-1] - a[..., :-2]
    right = a[..., 1:-1] - a[..., 2:]
    eps = np.asarray(eps, float)[..., None]
    hit = (left * right > 0) & (np.maximum(np.abs(left), np.abs(right)) >= eps)
    return np.sum(hit, axis=-1)


def waveform_length(x, axis: int = 0):
    x = _arr(x, 2, axis, "waveform_length")
    return np.sum(np.abs(np.diff(x, axis=axis)), axis=axis)


def ft_features(samples: np.ndarray, eps) -> np.ndarray:
    """FT block for windows ``(..., WINDOW, C)``: channel-major ``[mav, zc, ssc, wl]``."""
    samples = np.asarray(samples, dtype=float)
    axis = samples.ndim - 2
    eps = np.broadcast_to(np.asarray(eps, float), samples.shape[-1:]).copy()
    feats = np.stack([
        mav(samples, axis=axis),
        zero_crossings(samples, eps, axis=axis),
        slope_sign_changes(samples, eps, axis=axis),
        waveform_length(samples, axis=axis),
    ], axis=-1)
    return feats.reshape(feats.shape[:-2] + (-1,))


def default_eps(train_mav) -> np.ndarray:
    """Noise guard for zc/ssc: 1 % of the per-channel training MAV."""
    return 0.01 * np.asarray(train_mav, dtype=float)


@dataclass(frozen=True)
class ChannelNorm:
    """Per-channel z-score with statistics pooled over training recordings."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, arrays: Sequence[np.ndarray]) -> "ChannelNorm":
        n = sum(len(a) for a in arrays)
        s1 = sum(a.sum(axis=0) for a in arrays)
        s2 = sum((a * a).sum(axis=0) for a in arrays)
        mean = s1 / n
        var = np.maximum(s2 / n - mean * mean, 0.0)
        std = np.sqrt(var)
        return cls(mean, np.where(std > 0, std, 1.0))

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean


# -- feature vectors and labels ---------------------------------------------

@dataclass(frozen=True, eq=False)
class FeatureVector:
    mode: str
    values: np.ndarray
    end_time: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or len(v) != feature_width(self.mode, _channels_for(self.mode, len(v))):
            raise InvalidInputError(f"{self.mode} vector has wrong length {len(v)}")
        object.__setattr__(self, "values", v)

    @property
    def theta(self) -> float:
        return float(self.values[-1])


def _channels_for(mode, width):
    per = {"FT": N_FT, "FL": 1, "FTL": N_FT + 1}.get(mode)
    return (width - 1) // per if per else EMG_CHANNELS


@dataclass(frozen=True)
class LabeledSample:
    features: FeatureVector
    label: float
    prediction_time: float


def assemble_vector(window: Window, fl_features: Optional[Sequence[float]],
                    imu_angle: TimeSeries, mode: str, eps=0.0) -> FeatureVector:
    """Concatenate ``[FT block?, FL block?, theta]`` with theta read at the window end."""
    feature_width(mode)
    theta = sample_many(imu_angle, [window.end_time])[0, 0]
    parts = []
    if uses_ft(mode):
        parts.append(ft_features(window.samples, eps))
    if uses_fl(mode):
        if fl_features is None:
            raise InvalidInputError(f"mode {mode} needs extractor features")
        fl = np.asarray(fl_features, dtype=float)
        if fl.shape != (window.samples.shape[1],):
            raise InvalidInputError("one extractor feature per EMG channel expected")
        parts.append(fl)
    parts.append([theta])
    return FeatureVector(mode, np.concatenate(parts), window.end_time)


def feature_matrix(mode: str, theta: np.ndarray, ft: Optional[np.ndarray] = None,
                   fl: Optional[np.ndarray] = None) -> np.ndarray:
    """Batched :func:`assemble_vector` from precomputed blocks; rows are windows."""
    cols = []
    if uses_ft(mode):
        cols.append(ft)
    if uses_fl(mode):
        if fl is None:
            raise InvalidInputError(f"mode {mode} needs extractor features")
        cols.append(fl)
    cols.append(np.asarray(theta, dtype=float)[:, None])
    return np.column_stack(cols)


def label_times(end_times: np.ndarray, measured: TimeSeries, T: float):
    """Labels at ``end_time + T``; returns ``(labels, keep_mask)``.

    Targets past the measured span are dropped, not extrapolated.
    """
    if T < 0:
        raise InvalidParameterError("prediction time must be >= 0")
    target = np.asarray(end_times, dtype=float) + T
    tol = 1e-9 / measured.rate
    keep = (target >= measured.start_time - tol) & (target <= measured.end_time + tol)
    labels = np.full(len(target), np.nan)
    if keep.any():
        labels[keep] = sample_many(measured, target[keep])[:, 0]
    return labels, keep


def label_samples(vectors: Sequence[FeatureVector], measured: TimeSeries, T: float):
    """Attach the measured angle ``T`` seconds after each window end.

    Returns ``(samples, n_dropped)``.
    """
    ends = np.array([v.end_time for v in vectors])
    labels, keep = label_times(ends, measured, T)
    out = [LabeledSample(v, float(y), T) for v, y, k in zip(vectors, labels, keep) if k]
    return out, int(len(vectors) - keep.sum())


FEATURE_CSV_FIXED = ("end_time", "theta", "label", "T", "subject_id", "mode")


def write_feature_csv(path, rows: Sequence[LabeledSample], subject_id: str):
    if not rows:
        raise EmptyResultError("no labelled samples to write")
    k = len(rows[0].features.values) - 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["end_time"] + [f"f_{i + 1}" for i in range(k)]
                   + ["theta", "label", "T", "subject_id", "mode"])
        for s in rows:
            v = s.features.values
            w.writerow([repr(s.features.end_time)] + [repr(float(x)) for x in v[:-1]]
                       + [repr(float(v[-1])), repr(s.label), repr(s.prediction_time),
                          subject_id, s.features.mode])


def read_feature_csv(path):
    """Returns ``(samples, subject_ids)`` from a file written by :func:`write_feature_csv`."""
    samples, subjects = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fcols = [c for c in reader.fieldnames if c.startswith("f_")]
        for row in reader:
            vals = [float(row[c]) for c in fcols] + [float(row["theta"])]
            fv = FeatureVector(row["mode"], np.array(vals), float(row["end_time"]))
            samples.append(LabeledSample(fv, float(row["label"]), float(row["T"])))
            subjects.append(row["subject_id"])
    return samples, subjects
