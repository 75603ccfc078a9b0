import numpy as np
import pytest

from kinpred.errors import InvalidParameterError
from kinpred.gait_synth import (
    HIP_REST,
    N_EXTENSORS,
    SHANK_MARKERS,
    THIGH_LENGTH,
    THIGH_MARKERS,
    SyntheticSubjectSpec,
    default_shank_model,
    default_thigh_model,
    gen_activations,
    gen_emg,
    gen_imu_angle,
    gen_knee_trajectory,
    gen_markers,
    rectified_drives,
    synth_recording,
)
from kinpred.mocap_ik import measured_angle_series
from kinpred.signals import EMG_RATE, IMU_RATE, TimeSeries, sample_many


def lag_of_peak(a, b, max_lag):
    """Lag L maximising sum_t a[t + L] * b[t]."""
    a = a - a.mean()
    b = b - b.mean()
    lags = np.arange(-max_lag, max_lag + 1)
    n = len(a)
    xc = [np.dot(a[max_lag + L:n - max_lag + L], b[max_lag:n - max_lag]) for L in lags]
    return int(lags[int(np.argmax(xc))])


class TestSpec:
    def test_defaults(self):
        s = SyntheticSubjectSpec()
        assert (s.gait_period, s.knee_amplitude, s.knee_offset) == (1.1, 60.0, 5.0)
        assert s.emd_lead == 0.060 and s.imu_angle_rmse == 1.67
        assert s.in_emd_band

    def test_duration_must_cover_three_cycles(self):
        with pytest.raises(InvalidParameterError):
            SyntheticSubjectSpec(duration=3.0)

    def test_negative_noise_rejected(self):
        with pytest.raises(InvalidParameterError):
            SyntheticSubjectSpec(marker_noise_sigma=-1)

    def test_emd_band(self):
        assert not SyntheticSubjectSpec(emd_lead=0.2).in_emd_band


class TestKnee:
    def test_exact_periodicity_without_jitter(self):
        s = SyntheticSubjectSpec(period_jitter=0.0, duration=4.4)
        k = gen_knee_trajectory(s).values[:, 0]
        lag = int(round(1.1 * 100))
        np.testing.assert_allclose(k[lag:], k[:-lag], atol=1e-9)

    def test_zero_amplitude_is_constant(self):
        k = gen_knee_trajectory(SyntheticSubjectSpec(knee_amplitude=0, duration=5))
        np.testing.assert_array_equal(k.values, 5.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_range_and_continuity(self, seed):
        k = gen_knee_trajectory(SyntheticSubjectSpec(seed=seed, duration=120)).values[:, 0]
        assert k.min() >= -5 and k.max() <= 75
        assert np.abs(np.diff(k)).max() <= 3.0

    def test_autocorrelation_peak_at_period(self):
        s = SyntheticSubjectSpec(duration=120)
        k = gen_knee_trajectory(s).values[:, 0]
        k = k - k.mean()
        lags = np.arange(60, 200)
        ac = [np.dot(k[L:], k[:-L]) / (len(k) - L) for L in lags]
        peak = lags[int(np.argmax(ac))] / 100.0
        assert peak == pytest.approx(s.gait_period, rel=0.05)

    def test_sample_count(self):
        k = gen_knee_trajectory(SyntheticSubjectSpec(duration=10))
        assert len(k) == 1001 and k.rate == 100.0


class TestActivations:
    def test_constant_angle_gives_zero_envelopes(self):
        s = SyntheticSubjectSpec(emd_lead=0.0, duration=5)
        env = gen_activations(TimeSeries(0, 100, np.full(500, 20.0)), s)
        np.testing.assert_array_equal(env.values, 0.0)
        assert env.channels == 9

    def test_non_negative(self):
        s = SyntheticSubjectSpec(duration=20)
        env = gen_activations(gen_knee_trajectory(s), s)
        assert env.values.min() >= 0

    @pytest.mark.parametrize("lead_ms", [27, 54, 81, 108])
    def test_lead_recovered_from_total_extensor_envelope(self, lead_ms):
        s = SyntheticSubjectSpec(duration=30, emd_lead=lead_ms / 1000)
        knee = gen_knee_trajectory(s)
        env = gen_activations(knee, s).values[:, :N_EXTENSORS].sum(axis=1)
        drive = rectified_drives(knee)[:, 0]
        lag = lag_of_peak(env, drive, 30)
        assert abs(lag - (-lead_ms / 10)) <= 1.0

    @pytest.mark.parametrize("channel", range(N_EXTENSORS))
    def test_each_extensor_leads(self, channel):
        s = SyntheticSubjectSpec(duration=30)
        knee = gen_knee_trajectory(s)
        env = gen_activations(knee, s).values[:, channel]
        lag = lag_of_peak(env, rectified_drives(knee)[:, 0], 30)
        assert abs(lag + 6) <= 1

    def test_antagonist_groups_anticorrelated_on_sinusoid(self):
        s = SyntheticSubjectSpec(duration=20)
        t = np.arange(2000) / 100
        angle = TimeSeries(0, 100, 30 + 25 * np.sin(2 * np.pi * t / 1.1))
        env = gen_activations(angle, s).values
        ext = env[:, :N_EXTENSORS].sum(axis=1)
        flex = env[:, N_EXTENSORS:].sum(axis=1)
        assert np.corrcoef(ext, flex)[0, 1] <= 0


class TestEmg:
    def test_zero_envelope_zero_floor(self):
        s = SyntheticSubjectSpec(duration=5, emg_noise_floor=0)
        emg = gen_emg(TimeSeries(0, 100, np.zeros((501, 9))), s)
        np.testing.assert_array_equal(emg.values, 0.0)

    def test_moving_rms_tracks_envelope(self):
        s = SyntheticSubjectSpec(duration=30)
        env = gen_activations(gen_knee_trajectory(s), s)
        emg = gen_emg(env, s)
        w = int(round(0.05 * EMG_RATE))
        kernel = np.ones(w) / w
        truth = sample_many(env, emg.times)
        for c in range(9):
            mrms = np.sqrt(np.convolve(emg.values[:, c] ** 2, kernel, mode="same"))
            r = np.corrcoef(mrms[w:-w], truth[w:-w, c])[0, 1]
            assert r > 0.9

    def test_determinism(self):
        s = SyntheticSubjectSpec(duration=5)
        env = gen_activations(gen_knee_trajectory(s), s)
        a, b = gen_emg(env, s), gen_emg(env, s)
        np.testing.assert_array_equal(a.values, b.values)
        c = gen_emg(env, SyntheticSubjectSpec(duration=5, seed=1))
        assert not np.array_equal(a.values, c.values)

    def test_rate(self):
        s = SyntheticSubjectSpec(duration=5)
        emg = gen_emg(gen_activations(gen_knee_trajectory(s), s), s)
        assert emg.rate == EMG_RATE and emg.channels == 9


class TestMarkers:
    def test_zero_angle_rest_pose(self):
        s = SyntheticSubjectSpec(marker_noise_sigma=0, duration=5)
        m = gen_markers(TimeSeries(0, 100, np.zeros(10)), s)
        pts = m.values.reshape(10, 8, 3)
        knee = HIP_REST + np.array([0, 0, -THIGH_LENGTH])
        np.testing.assert_array_equal(pts[:, 4:], np.broadcast_to(knee + SHANK_MARKERS, (10, 4, 3)))
        np.testing.assert_array_equal(pts[:, :4], np.broadcast_to(HIP_REST + THIGH_MARKERS, (10, 4, 3)))

    def test_rigid_segments(self):
        s = SyntheticSubjectSpec(marker_noise_sigma=0, duration=10)
        rec = synth_recording(s)
        pts = rec.markers.values.reshape(len(rec.markers), 8, 3)
        for seg in (pts[:, :4], pts[:, 4:]):
            d = np.linalg.norm(seg[:, :, None] - seg[:, None, :], axis=-1)
            assert np.abs(d - d[0]).max() < 1e-9

    def test_noiseless_roundtrip_through_ik(self):
        s = SyntheticSubjectSpec(marker_noise_sigma=0, duration=20)
        rec = synth_recording(s)
        back = measured_angle_series(rec.markers, default_thigh_model(),
                                     default_shank_model(), cutoff=None)
        assert np.abs(back.values - rec.measured_angle.values).max() < 1e-6

    def test_noise_sigma(self):
        s0 = SyntheticSubjectSpec(marker_noise_sigma=0, duration=10)
        s1 = SyntheticSubjectSpec(marker_noise_sigma=1.0, duration=10)
        k = gen_knee_trajectory(s0)
        diff = gen_markers(k, s1).values - gen_markers(k, s0).values
        assert np.std(diff) == pytest.approx(1.0, rel=0.05)


class TestImu:
    def test_zero_rmse_is_exact_truth(self):
        s = SyntheticSubjectSpec(imu_angle_rmse=0, duration=10)
        k = gen_knee_trajectory(s)
        imu = gen_imu_angle(k, s)
        np.testing.assert_array_equal(imu.values, sample_many(k, imu.times))

    @pytest.mark.parametrize("seed", range(3))
    def test_default_rmse(self, seed):
        s = SyntheticSubjectSpec(seed=seed, duration=60)
        k = gen_knee_trajectory(s)
        imu = gen_imu_angle(k, s)
        err = imu.values[:, 0] - sample_many(k, imu.times)[:, 0]
        assert 1.50 <= np.sqrt(np.mean(err ** 2)) <= 1.84

    def test_rate_is_74(self):
        s = SyntheticSubjectSpec(duration=5)
        assert gen_imu_angle(gen_knee_trajectory(s), s).rate == IMU_RATE == 74.0


class TestRecording:
    def test_full_length_emg(self):
        rec = synth_recording(SyntheticSubjectSpec(duration=180))
        assert len(rec.emg) == round(180 * 1111.11) == 200000

    def test_shared_start_time(self):
        rec = synth_recording(SyntheticSubjectSpec(duration=5))
        starts = {rec.emg.start_time, rec.imu_angle.start_time, rec.markers.start_time,
                  rec.measured_angle.start_time}
        assert starts == {0.0}

    def test_ten_distinct_reproducible_subjects(self):
        specs = [SyntheticSubjectSpec(seed=k, duration=4) for k in range(10)]
        a = [synth_recording(s) for s in specs]
        b = [synth_recording(s) for s in specs]
        assert len({r.subject_id for r in a}) == 10
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.emg.values, y.emg.values)
            np.testing.assert_array_equal(x.markers.values, y.markers.values)
        assert not np.array_equal(a[0].imu_angle.values, a[1].imu_angle.values)

    def test_meta_records_lead(self):
        rec = synth_recording(SyntheticSubjectSpec(duration=5, emd_lead=0.081))
        assert rec.meta["emd_lead_ms"] == 81.0
        assert rec.meta["synth"]["seed"] == 0

    def test_all_streams_finite_and_uniform(self):
        rec = synth_recording(SyntheticSubjectSpec(duration=5))
        for ts in (rec.emg, rec.imu_angle, rec.markers, rec.measured_angle):
            assert np.all(np.isfinite(ts.values)) and ts.rate > 0
