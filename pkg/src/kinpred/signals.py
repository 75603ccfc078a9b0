"""Uniformly sampled time series, interpolation, Butterworth smoothing and
CSV/manifest ingestion for multi-rate sensor recordings."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import signal as sps

from kinpred.errors import (
    DataError,
    InvalidInputError,
    InvalidParameterError,
    OutOfRangeError,
    TooShortError,
)

EMG_RATE = 1111.11
IMU_RATE = 74.0
MARKER_RATE = 100.0
EMG_CHANNELS = 9

# slack (in samples) when deciding whether a time lies on the sampled span
_SPAN_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Frames sampled at ``rate`` Hz; frame ``i`` sits at ``start_time + i / rate``.

    ``values`` is stored as a read-only ``(n, channels)`` float array.
    """

    start_time: float
    rate: float
    values: np.ndarray

    def __post_init__(self):
        if not (self.rate > 0 and np.isfinite(self.rate)):
            raise InvalidParameterError(f"rate must be positive, got {self.rate}")
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2:
            raise InvalidInputError("values must be a list of equal-width frames")
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "start_time", float(self.start_time))
        object.__setattr__(self, "rate", float(self.rate))

    def __len__(self):
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self)) / self.rate

    @property
    def end_time(self) -> float:
        return self.start_time + (len(self) - 1) / self.rate

    def channel(self, k: int) -> np.ndarray:
        return self.values[:, k]

    def with_values(self, values) -> "TimeSeries":
        return TimeSeries(self.start_time, self.rate, values)


@dataclass(frozen=True, eq=False)
class SensorRecording:
    subject_id: str
    emg: TimeSeries
    imu_angle: TimeSeries
    markers: TimeSeries
    measured_angle: Optional[TimeSeries] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.emg.channels != EMG_CHANNELS:
            raise InvalidInputError(f"emg must have {EMG_CHANNELS} channels, got {self.emg.channels}")
        if self.markers.channels % 3:
            raise InvalidInputError("marker frame width must be divisible by 3")
        if self.imu_angle.channels != 1:
            raise InvalidInputError("imu_angle must have one channel")


def _check_filter_args(series: TimeSeries, order: int, cutoff: float):
    if order < 2 or order % 2:
        raise InvalidParameterError(f"order must be even and >= 2, got {order}")
    if not 0 < cutoff < series.rate / 2:
        raise InvalidParameterError(
            f"cutoff {cutoff} Hz must lie in (0, Nyquist={series.rate / 2} Hz)"
        )
    if len(series) < 3 * order:
        raise TooShortError(f"series of {len(series)} frames is shorter than 3 x order")


def butterworth_sos(order: int, cutoff: float, rate: float) -> np.ndarray:
    """Second-order sections of a digital Butterworth low-pass (bilinear, pre-warped)."""
    return sps.butter(order, cutoff, btype="low", output="sos", fs=rate)


def butterworth_lowpass(series: TimeSeries, order: int = 4, cutoff: float = 6.0,
                        zero_phase: bool = True) -> TimeSeries:
    """Low-pass every channel with a Butterworth biquad cascade.

    With ``zero_phase`` the cascade runs forward then backward over an
    odd-reflected extension of ``3 * order`` samples at each end, giving a
    lag-free response with squared magnitude. Otherwise a single causal pass
    is made, starting from the steady state of the first frame.
    """
    _check_filter_args(series, order, cutoff)
    sos = butterworth_sos(order, cutoff, series.rate)
    x = series.values
    if zero_phase:
        padlen = min(3 * order, len(series) - 1)
        y = sps.sosfiltfilt(sos, x, axis=0, padtype="odd", padlen=padlen)
    else:
        zi = sps.sosfilt_zi(sos)[:, :, None] * x[0][None, None, :]
        y, _ = sps.sosfilt(sos, x, axis=0, zi=zi)
    return series.with_values(y)


def _positions(series: TimeSeries, times) -> np.ndarray:
    u = (np.asarray(times, dtype=float) - series.start_time) * series.rate
    last = len(series) - 1
    bad = (u < -_SPAN_TOL) | (u > last + _SPAN_TOL)
    if np.any(bad):
        t_bad = np.asarray(times, dtype=float)[bad]
        raise OutOfRangeError(
            f"time {t_bad.flat[0]!r} outside [{series.start_time}, {series.end_time}]"
        )
    r = np.rint(u)
    u = np.where(np.abs(u - r) < _SPAN_TOL, r, u)
    return np.clip(u, 0, last)


def _interp_rows(values: np.ndarray, u: np.ndarray) -> np.ndarray:
    lo = np.floor(u).astype(int)
    lo = np.minimum(lo, values.shape[0] - 1)
    hi = np.minimum(lo + 1, values.shape[0] - 1)
    w = (u - lo)[..., None]
    return values[lo] * (1.0 - w) + values[hi] * w


def sample_at(series: TimeSeries, t: float) -> np.ndarray:
    """Linearly interpolated frame at time ``t``; never extrapolates."""
    u = _positions(series, [t])
    return _interp_rows(series.values, u)[0]


def sample_many(series: TimeSeries, times) -> np.ndarray:
    """Vectorised :func:`sample_at`, returning ``(len(times), channels)``."""
    u = _positions(series, times)
    return _interp_rows(series.values, u)


def resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``(n_out, n_in)`` linear-interpolation operator over a uniform span.

    Endpoints map exactly onto endpoints.
    """
    if n_out < 2 or n_in < 2:
        raise InvalidParameterError("resampling needs at least 2 input and 2 output samples")
    u = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    u[-1] = n_in - 1
    lo = np.minimum(np.floor(u).astype(int), n_in - 2)
    w = u - lo
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    m[rows, lo] = 1.0 - w
    m[rows, lo + 1] += w
    return m


def resample(series: TimeSeries, n_out: int) -> TimeSeries:
    """Resample onto ``n_out`` frames evenly spanning the first..last timestamp."""
    if n_out < 2:
        raise InvalidParameterError(f"n_out must be >= 2, got {n_out}")
    if len(series) < 2:
        raise TooShortError("series needs at least 2 frames to resample")
    span = (len(series) - 1) / series.rate
    out = resample_matrix(len(series), n_out) @ series.values
    return TimeSeries(series.start_time, (n_out - 1) / span, out)


# -- CSV / manifest ingestion ------------------------------------------------

def write_series_csv(path, series: TimeSeries, names: Optional[Sequence[str]] = None,
                     fmt: str = "%.12g"):
    names = list(names) if names is not None else [f"c{k}" for k in range(series.channels)]
    if len(names) != series.channels:
        raise InvalidInputError("one column name per channel required")
    data = np.column_stack([series.times, series.values])
    header = ",".join(["t"] + names)
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=fmt)


def read_series_csv(path, rate: float) -> TimeSeries:
    """Load a ``t, ch...`` CSV declared to be sampled at ``rate`` Hz."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such CSV file: {path}")
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header or header[0].strip() != "t":
        raise DataError(f"{path}: header row with leading 't' column required")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] == 0 or data.shape[1] < 2:
        raise DataError(f"{path}: no data rows")
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite values (missing samples are rejected)")
    t = data[:, 0]
    if np.any(np.diff(t) <= 0):
        raise DataError(f"{path}: timestamps are not strictly increasing")
    return TimeSeries(t[0], rate, data[:, 1:])


MANIFEST_STREAMS = {
    "emg": "emg_csv",
    "imu": "imu_csv",
    "markers": "markers_csv",
    "measured": "measured_csv",
}


def load_recording(manifest_path) -> SensorRecording:
    manifest_path = Path(manifest_path)
    try:
        man = json.loads(manifest_path.read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    base = manifest_path.parent
    rates = man.get("rates", {})
    streams = {}
    for key, fld in MANIFEST_STREAMS.items():
        rel = man.get(fld)
        if rel is None:
            if key == "measured":
                continue
            raise DataError(f"{manifest_path}: manifest field '{fld}' missing")
        p = base / rel
        if not p.is_file():
            raise DataError(f"{manifest_path}: file for '{fld}' not found: {p}")
        streams[key] = read_series_csv(p, rates.get(key, _default_rate(key)))
    meta = {k: v for k, v in man.items() if k not in MANIFEST_STREAMS.values()}
    return SensorRecording(
        subject_id=str(man["subject_id"]),
        emg=streams["emg"],
        imu_angle=streams["imu"],
        markers=streams["markers"],
        measured_angle=streams.get("measured"),
        meta=meta,
    )


def _default_rate(key):
    return {"emg": EMG_RATE, "imu": IMU_RATE, "markers": MARKER_RATE, "measured": MARKER_RATE}[key]


def save_recording(rec: SensorRecording, out_dir, extra: Optional[dict] = None) -> Path:
    """Write the four streams and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    sid = rec.subject_id
    files = {
        "emg_csv": f"{sid}_emg.csv",
        "imu_csv": f"{sid}_imu.csv",
        "markers_csv": f"{sid}_markers.csv",
    }
    write_series_csv(out_dir / files["emg_csv"], rec.emg,
                     [f"emg{k + 1}" for k in range(rec.emg.channels)])
    write_series_csv(out_dir / files["imu_csv"], rec.imu_angle, ["theta"])
    m = rec.markers.channels // 3
    write_series_csv(out_dir / files["markers_csv"], rec.markers,
                     [f"m{i + 1}_{ax}" for i in range(m) for ax in "xyz"])
    rates = {"emg": rec.emg.rate, "imu": rec.imu_angle.rate, "markers": rec.markers.rate}
    if rec.measured_angle is not None:
        files["measured_csv"] = f"{sid}_measured.csv"
        write_series_csv(out_dir / files["measured_csv"], rec.measured_angle, ["theta_hat"])
        rates["measured"] = rec.measured_angle.rate
    manifest = {"subject_id": sid, **files, "rates": rates}
    manifest.update(rec.meta)
    if extra:
        manifest.update(extra)
    path = out_dir / f"{sid}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
