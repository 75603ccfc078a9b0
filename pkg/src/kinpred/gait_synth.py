"""Synthetic gait recordings with a known electromechanical-delay lead.

Each subject is a pure function of its :class:`SyntheticSubjectSpec`. The
knee trajectory drives muscle envelopes that are advanced in time by
``emd_lead``, so the EMG stream carries information about motion that has
not happened yet.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal as sps

from kinpred.errors import InvalidInputError, InvalidParameterError
from kinpred.mocap_ik import SegmentModel
from kinpred.signals import (
    EMG_CHANNELS,
    EMG_RATE,
    IMU_RATE,
    MARKER_RATE,
    SensorRecording,
    TimeSeries,
    butterworth_lowpass,
    sample_many,
)

# harmonic amplitude and peak position (fraction of cycle) of the knee shape
_KNEE_HARMONICS = ((1.0, 0.70), (0.18, 0.78), (0.08, 0.12))
_HIP_AMPLITUDE = 22.0
_HIP_OFFSET = 10.0
# angular velocity (deg/s) that maps to unit muscle drive
_DRIVE_REF = 200.0
_ENVELOPE_CUTOFF = 8.0
N_EXTENSORS = 5

THIGH_LENGTH = 420.0
HIP_REST = np.array([0.0, 0.0, 900.0])
THIGH_MARKERS = np.array([
    [50.0, 80.0, -100.0],
    [70.0, 90.0, -380.0],
    [80.0, -60.0, -250.0],
    [-40.0, 85.0, -300.0],
])
SHANK_MARKERS = np.array([
    [40.0, 75.0, -60.0],
    [60.0, 80.0, -330.0],
    [70.0, -50.0, -200.0],
    [-30.0, 70.0, -250.0],
])
KNEE_AXIS = np.array([0.0, 1.0, 0.0])


def default_thigh_model() -> SegmentModel:
    return SegmentModel(THIGH_MARKERS, np.ones(len(THIGH_MARKERS)), KNEE_AXIS)


def default_shank_model() -> SegmentModel:
    return SegmentModel(SHANK_MARKERS, np.ones(len(SHANK_MARKERS)), KNEE_AXIS)


@dataclass(frozen=True)
class SyntheticSubjectSpec:
    seed: int = 0
    duration: float = 180.0
    gait_period: float = 1.1
    knee_amplitude: float = 60.0
    knee_offset: float = 5.0
    emd_lead: float = 0.060
    emg_noise_floor: float = 0.05
    imu_angle_rmse: float = 1.67
    marker_noise_sigma: float = 1.0
    period_jitter: float = 0.03

    def __post_init__(self):
        if self.gait_period <= 0:
            raise InvalidParameterError("gait_period must be positive")
        if self.duration < 3 * self.gait_period:
            raise InvalidParameterError("duration must cover at least three gait cycles")
        for name in ("emd_lead", "emg_noise_floor", "imu_angle_rmse",
                     "marker_noise_sigma", "period_jitter", "knee_amplitude"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be >= 0")

    @property
    def in_emd_band(self) -> bool:
        return 0.025 <= self.emd_lead <= 0.125

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream])

    def as_dict(self) -> dict:
        return asdict(self)


def _angle_grid(spec: SyntheticSubjectSpec) -> np.ndarray:
    n = int(np.floor(spec.duration * MARKER_RATE + 1e-9)) + 1
    return np.arange(n) / MARKER_RATE


def _knee_shape(phase: np.ndarray) -> np.ndarray:
    """Unit-range knee profile over gait phase (radians)."""
    grid = np.linspace(0, 2 * np.pi, 4097)
    raw = lambda ph: sum(a * np.cos(k * (ph - 2 * np.pi * p))
                         for k, (a, p) in enumerate(_KNEE_HARMONICS, 1))
    ref = raw(grid)
    return (raw(phase) - ref.min()) / (ref.max() - ref.min())


def gait_phase(spec: SyntheticSubjectSpec, t: np.ndarray):
    """Phase (rad) and amplitude factor at times ``t``.

    Cycle periods are jittered per cycle; the amplitude drifts slowly with
    the same relative variability. Both are exactly constant when
    ``period_jitter`` is zero.
    """
    rng = spec.rng(1)
    phase0 = rng.uniform(0, 2 * np.pi)
    jit = spec.period_jitter
    n_cycles = int(np.ceil(spec.duration / (spec.gait_period * 0.9))) + 2
    factors = 1.0 + jit * np.clip(rng.standard_normal(n_cycles), -2.5, 2.5)
    periods = spec.gait_period * factors
    starts = np.concatenate([[0.0], np.cumsum(periods)])
    k = np.searchsorted(starts, t, side="right") - 1
    phase = phase0 + 2 * np.pi * (k + (t - starts[k]) / periods[k])
    freqs = rng.uniform(0.02, 0.1, size=3)
    offs = rng.uniform(0, 2 * np.pi, size=3)
    drift = np.mean(np.sin(2 * np.pi * freqs[:, None] * t[None, :] + offs[:, None]), axis=0)
    return phase, 1.0 + 1.5 * jit * drift


def gen_knee_trajectory(spec: SyntheticSubjectSpec) -> TimeSeries:
    """Knee flexion (deg) at 100 Hz from the first three gait harmonics."""
    t = _angle_grid(spec)
    phase, amp = gait_phase(spec, t)
    theta = spec.knee_offset + spec.knee_amplitude * amp * _knee_shape(phase)
    return TimeSeries(0.0, MARKER_RATE, theta)


def gen_hip_trajectory(spec: SyntheticSubjectSpec) -> TimeSeries:
    """Hip flexion (deg) at 100 Hz; only used to swing the thigh in marker space."""
    t = _angle_grid(spec)
    phase, amp = gait_phase(spec, t)
    return TimeSeries(0.0, MARKER_RATE, _HIP_OFFSET + _HIP_AMPLITUDE * amp * np.cos(phase))


def _channel_mixing(spec: SyntheticSubjectSpec) -> np.ndarray:
    """(2, 9) weights of [extensor drive, flexor drive] per channel."""
    rng = spec.rng(2)
    gains = rng.uniform(0.7, 1.3, size=EMG_CHANNELS)
    crosstalk = rng.uniform(0.0, 0.15, size=EMG_CHANNELS)
    own = np.r_[np.zeros(N_EXTENSORS, int), np.ones(EMG_CHANNELS - N_EXTENSORS, int)]
    mix = np.zeros((2, EMG_CHANNELS))
    cols = np.arange(EMG_CHANNELS)
    mix[own, cols] = gains * (1 - crosstalk)
    mix[1 - own, cols] = gains * crosstalk
    return mix


def rectified_drives(angle: TimeSeries) -> np.ndarray:
    """(n, 2) positive and negative parts of angular velocity, in drive units."""
    vel = np.gradient(angle.values[:, 0], 1.0 / angle.rate)
    return np.column_stack([np.maximum(vel, 0.0), np.maximum(-vel, 0.0)]) / _DRIVE_REF


def gen_activations(angle: TimeSeries, spec: SyntheticSubjectSpec) -> TimeSeries:
    """Nine non-negative envelopes; channel ``c`` at ``t`` reflects motion at ``t + emd_lead``.

    Channels ``0..4`` are extensors (driven by positive angular velocity),
    ``5..8`` flexors (negative angular velocity), with small crosstalk.
    """
    if angle.channels != 1:
        raise InvalidInputError("angle must be a single-channel series")
    drives = rectified_drives(angle)
    t = angle.times
    advanced = np.column_stack([np.interp(t + spec.emd_lead, t, d) for d in drives.T])
    env = advanced @ _channel_mixing(spec)
    if len(angle) >= 12:
        env = butterworth_lowpass(angle.with_values(env), 2, _ENVELOPE_CUTOFF).values
    return angle.with_values(np.maximum(env, 0.0))


def _band_noise(rng: np.random.Generator, n: int, channels: int) -> np.ndarray:
    sos = sps.butter(4, [20.0, 450.0], btype="band", output="sos", fs=EMG_RATE)
    x = sps.sosfilt(sos, rng.standard_normal((n + 2000, channels)), axis=0)[2000:]
    return x / np.sqrt(np.mean(x * x, axis=0))


def gen_emg(envelopes: TimeSeries, spec: SyntheticSubjectSpec) -> TimeSeries:
    """Raw EMG at 1111.11 Hz: unit-RMS 20-450 Hz noise scaled by the envelope, plus a floor."""
    if np.any(envelopes.values < 0):
        raise InvalidInputError("envelopes must be non-negative")
    span = envelopes.end_time - envelopes.start_time
    n = min(int(round(spec.duration * EMG_RATE)), int(np.floor(span * EMG_RATE + 1e-9)) + 1)
    t = envelopes.start_time + np.arange(n) / EMG_RATE
    env = sample_many(envelopes, t)
    rng = spec.rng(3)
    carrier = _band_noise(rng, n, envelopes.channels)
    emg = carrier * env
    floor = spec.emg_noise_floor * float(envelopes.values.max(initial=0.0))
    if floor > 0:
        emg += floor * _band_noise(rng, n, envelopes.channels)
    return TimeSeries(envelopes.start_time, EMG_RATE, emg)


def _rot_y(deg: np.ndarray) -> np.ndarray:
    a = np.radians(np.asarray(deg, dtype=float))
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 0, 0] = c
    R[..., 0, 2] = s
    R[..., 1, 1] = 1.0
    R[..., 2, 0] = -s
    R[..., 2, 2] = c
    return R


def gen_markers(angle: TimeSeries, spec: SyntheticSubjectSpec,
                hip: TimeSeries | None = None) -> TimeSeries:
    """World marker positions (mm) of a planar thigh-shank pair, thigh markers first.

    Positive hip flexion swings the thigh forward; positive knee flexion
    rotates the shank backwards relative to the thigh. Without ``hip`` the
    thigh stays in its rest pose.
    """
    if angle.channels != 1:
        raise InvalidInputError("angle must be a single-channel series")
    hip_deg = np.zeros(len(angle)) if hip is None else hip.values[:, 0]
    R_th = _rot_y(-hip_deg)
    R_sh = R_th @ _rot_y(angle.values[:, 0])
    knee = HIP_REST + np.einsum("fij,j->fi", R_th, np.array([0.0, 0.0, -THIGH_LENGTH]))
    thigh_pts = HIP_REST + np.einsum("fij,mj->fmi", R_th, THIGH_MARKERS)
    shank_pts = knee[:, None, :] + np.einsum("fij,mj->fmi", R_sh, SHANK_MARKERS)
    pts = np.concatenate([thigh_pts, shank_pts], axis=1).reshape(len(angle), -1)
    if spec.marker_noise_sigma > 0:
        pts = pts + spec.marker_noise_sigma * spec.rng(4).standard_normal(pts.shape)
    return angle.with_values(pts)


def gen_imu_angle(angle: TimeSeries, spec: SyntheticSubjectSpec) -> TimeSeries:
    """Truth resampled to 74 Hz plus slow bias and white noise with RMSE ``imu_angle_rmse``."""
    if angle.channels != 1:
        raise InvalidInputError("angle must be a single-channel series")
    span = angle.end_time - angle.start_time
    n = int(np.floor(span * IMU_RATE + 1e-9)) + 1
    t = angle.start_time + np.arange(n) / IMU_RATE
    truth = sample_many(angle, t)[:, 0]
    if spec.imu_angle_rmse == 0:
        return TimeSeries(angle.start_time, IMU_RATE, truth)
    rng = spec.rng(5)
    bias = sps.sosfiltfilt(sps.butter(2, 0.2, output="sos", fs=IMU_RATE), rng.standard_normal(n))
    bias /= np.sqrt(np.mean(bias ** 2))
    err = np.sqrt(0.6) * bias + np.sqrt(0.4) * rng.standard_normal(n)
    err *= spec.imu_angle_rmse / np.sqrt(np.mean(err ** 2))
    return TimeSeries(angle.start_time, IMU_RATE, truth + err)


def synth_recording(spec: SyntheticSubjectSpec, subject_id: str | None = None) -> SensorRecording:
    truth = gen_knee_trajectory(spec)
    env = gen_activations(truth, spec)
    return SensorRecording(
        subject_id=subject_id or f"S{spec.seed:02d}",
        emg=gen_emg(env, spec),
        imu_angle=gen_imu_angle(truth, spec),
        markers=gen_markers(truth, spec, gen_hip_trajectory(spec)),
        measured_angle=truth,
        meta={"synth": spec.as_dict(), "emd_lead_ms": round(spec.emd_lead * 1000, 6)},
    )
