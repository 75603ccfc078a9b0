import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kinpred.errors import (
    EmptyResultError,
    InvalidInputError,
    InvalidParameterError,
    OutOfRangeError,
)
from kinpred.features import (
    HOP,
    WINDOW,
    ChannelNorm,
    FeatureVector,
    LabeledSample,
    Window,
    assemble_vector,
    default_eps,
    feature_matrix,
    feature_width,
    ft_features,
    label_samples,
    mav,
    read_feature_csv,
    segment_windows,
    slope_sign_changes,
    waveform_length,
    window_count,
    write_feature_csv,
    zero_crossings,
)
from kinpred.signals import EMG_RATE, TimeSeries

from oracles import slope_sign_changes_naive, window_count_naive, zero_crossings_naive

signal = arrays(float, st.integers(3, 60), elements=st.floats(-100, 100))


def emg(n, rng=None):
    rng = rng or np.random.default_rng(0)
    return TimeSeries(0.0, EMG_RATE, rng.standard_normal((n, 9)))


class TestSegmentation:
    def test_sizes(self):
        assert WINDOW == 165 and HOP == 15

    def test_single_window(self):
        w = segment_windows(emg(165))
        assert len(w) == 1
        assert w[0].samples.shape == (165, 9)

    def test_one_second(self):
        assert len(segment_windows(emg(1110))) == 64

    def test_too_short(self):
        with pytest.raises(EmptyResultError):
            segment_windows(emg(164))

    def test_hop_spacing_and_end_time(self):
        ts = emg(400)
        w = segment_windows(ts)
        np.testing.assert_allclose(np.diff(w.end_times), 15 / EMG_RATE, rtol=0, atol=1e-15)
        for k in range(len(w)):
            assert w[k].end_time == pytest.approx(ts.times[k * 15 + 164], abs=1e-12)
            np.testing.assert_array_equal(w[k].samples[-1], ts.values[k * 15 + 164])

    @given(st.integers(165, 5000))
    def test_count_formula_matches_enumeration(self, n):
        assert window_count(n) == window_count_naive(n) == (n - 165) // 15 + 1


class TestScalarFeatures:
    def test_mav(self):
        assert mav([1, -1, 1, -1]) == 1
        assert mav([0, 0, 0]) == 0
        assert mav([3, -4]) == 3.5
        with pytest.raises(InvalidInputError):
            mav([])

    def test_zero_crossings(self):
        assert zero_crossings([1, -1, 1], 0) == 2
        assert zero_crossings([1, 2, 3], 0) == 0
        assert zero_crossings([1, 2, 3], 5) == 0
        assert zero_crossings([0.2, -0.2, 0.9], 0.5) == 1

    def test_slope_sign_changes(self):
        assert slope_sign_changes([1, 2, 1], 0) == 1
        assert slope_sign_changes([1, 2, 3], 0) == 0
        assert slope_sign_changes([0, 1, 0, 1], 0) == 2
        with pytest.raises(InvalidInputError):
            slope_sign_changes([1, 2], 0)

    def test_waveform_length(self):
        assert waveform_length([0, 1, 0]) == 2
        assert waveform_length([4, 4, 4]) == 0
        assert waveform_length([1, 4]) == 3
        with pytest.raises(InvalidInputError):
            waveform_length([1])

    @given(signal, st.floats(0, 50))
    def test_counts_match_naive(self, x, eps):
        assert zero_crossings(x, eps) == zero_crossings_naive(list(x), eps)
        assert slope_sign_changes(x, eps) == slope_sign_changes_naive(list(x), eps)

    @given(signal, st.floats(0, 10))
    def test_sign_flip_invariance(self, x, eps):
        for f in (mav, waveform_length):
            assert f(-x) == pytest.approx(f(x))
        assert zero_crossings(-x, eps) == zero_crossings(x, eps)
        assert slope_sign_changes(-x, eps) == slope_sign_changes(x, eps)

    @given(signal, st.floats(0.01, 100))
    def test_scaling(self, x, a):
        assert mav(a * x) == pytest.approx(a * mav(x), rel=1e-12, abs=1e-300)
        assert waveform_length(a * x) == pytest.approx(a * waveform_length(x), rel=1e-12,
                                                       abs=1e-300)

    @given(arrays(float, st.integers(3, 40),
                  elements=st.floats(-100, 100).filter(lambda v: v == 0 or abs(v) > 1e-3)),
           st.floats(0.1, 10))
    def test_counts_scale_invariant_without_eps(self, x, a):
        assert zero_crossings(a * x, 0) == zero_crossings(x, 0)
        assert slope_sign_changes(a * x, 0) == slope_sign_changes(x, 0)


class TestFtBlock:
    def test_layout_is_channel_major(self, rng):
        x = rng.standard_normal((165, 9))
        eps = np.full(9, 0.05)
        f = ft_features(x, eps)
        assert f.shape == (36,)
        for c in range(9):
            ch = x[:, c]
            np.testing.assert_allclose(f[4 * c:4 * c + 4], [
                mav(ch), zero_crossings(ch, 0.05), slope_sign_changes(ch, 0.05),
                waveform_length(ch)])

    def test_batched_matches_single(self, rng):
        x = rng.standard_normal((7, 165, 9))
        f = ft_features(x, 0.1)
        for k in range(7):
            np.testing.assert_allclose(f[k], ft_features(x[k], 0.1))

    def test_default_eps(self):
        np.testing.assert_allclose(default_eps([1.0, 2.0]), [0.01, 0.02])


class TestVectors:
    imu = TimeSeries(0.0, 74.0, np.full(200, 12.0))

    def test_ft_zero_window(self):
        v = assemble_vector(Window(np.zeros((165, 9)), 1.0), None, self.imu, "FT")
        assert len(v.values) == 37
        np.testing.assert_array_equal(v.values[:36], 0)
        assert v.theta == 12.0

    def test_widths(self):
        assert (feature_width("FT"), feature_width("FL"), feature_width("FTL")) == (37, 10, 46)
        win = Window(np.ones((165, 9)), 1.0)
        v = assemble_vector(win, np.arange(9.0), self.imu, "FTL")
        assert len(v.values) == 46

    def test_fl_order(self):
        e = np.arange(1.0, 10.0)
        v = assemble_vector(Window(np.zeros((165, 9)), 1.0), e, self.imu, "FL")
        np.testing.assert_array_equal(v.values, np.r_[e, 12.0])

    def test_fl_requires_features(self):
        with pytest.raises(InvalidInputError):
            assemble_vector(Window(np.zeros((165, 9)), 1.0), None, self.imu, "FL")

    def test_theta_out_of_range(self):
        with pytest.raises(OutOfRangeError):
            assemble_vector(Window(np.zeros((165, 9)), 5.0), None, self.imu, "FT")

    def test_wrong_width_rejected(self):
        with pytest.raises(InvalidInputError):
            FeatureVector("FT", np.zeros(38), 0.0)

    def test_unknown_mode(self):
        with pytest.raises(InvalidParameterError):
            feature_width("XYZ")

    def test_feature_matrix_matches_assemble(self, rng):
        x = rng.standard_normal((3, 165, 9))
        fl = rng.standard_normal((3, 9))
        theta = np.array([12.0, 12.0, 12.0])
        M = feature_matrix("FTL", theta, ft=ft_features(x, 0.0), fl=fl)
        for k in range(3):
            v = assemble_vector(Window(x[k], 1.0), fl[k], self.imu, "FTL")
            np.testing.assert_allclose(M[k], v.values)


class TestLabels:
    measured = TimeSeries(0.0, 100.0, np.arange(0, 300, dtype=float) ** 1.5)

    def vec(self, t):
        return FeatureVector("FL", np.zeros(10), t)

    def test_t0_on_grid(self):
        out, dropped = label_samples([self.vec(1.0)], self.measured, 0.0)
        assert dropped == 0 and out[0].label == self.measured.values[100, 0]

    def test_interpolation_weights(self):
        out, _ = label_samples([self.vec(1.0)], self.measured, 0.027)
        y = self.measured.values[:, 0]
        assert out[0].label == pytest.approx(0.3 * y[102] + 0.7 * y[103], rel=1e-12)
        assert out[0].prediction_time == 0.027

    def test_tail_drop_count(self):
        hop = 15 / EMG_RATE
        last = 2.0
        ends = last - hop * np.arange(40)[::-1]
        meas = TimeSeries(0.0, 100.0, np.zeros(int(round((last + 0.1) * 100)) + 1))
        out, dropped = label_samples([self.vec(t) for t in ends], meas, 0.162)
        assert dropped == math.ceil((0.162 - 0.1) * (EMG_RATE / 15))
        assert len(out) == 40 - dropped

    def test_negative_T(self):
        with pytest.raises(InvalidParameterError):
            label_samples([self.vec(1.0)], self.measured, -0.01)

    def test_deterministic(self):
        vs = [self.vec(t) for t in np.linspace(0.2, 2.5, 30)]
        a, _ = label_samples(vs, self.measured, 0.054)
        b, _ = label_samples(vs, self.measured, 0.054)
        assert [s.label for s in a] == [s.label for s in b]


class TestNormAndCsv:
    @given(arrays(float, (20, 3), elements=st.floats(-1e3, 1e3)))
    def test_norm_roundtrip(self, x):
        n = ChannelNorm.fit([x[:10], x[10:]])
        np.testing.assert_allclose(n.invert(n.apply(x)), x, atol=1e-9)

    def test_constant_channel_std_is_one(self):
        n = ChannelNorm.fit([np.ones((5, 2))])
        np.testing.assert_array_equal(n.std, 1.0)

    def test_csv_roundtrip(self, tmp_path, rng):
        rows = [LabeledSample(FeatureVector("FT", rng.standard_normal(37), 0.1 * k), 3.0 * k,
                              0.054) for k in range(5)]
        write_feature_csv(tmp_path / "f.csv", rows, "S03")
        back, subjects = read_feature_csv(tmp_path / "f.csv")
        assert subjects == ["S03"] * 5
        for a, b in zip(rows, back):
            np.testing.assert_array_equal(a.features.values, b.features.values)
            assert (a.label, a.prediction_time, a.features.mode) == \
                   (b.label, b.prediction_time, b.features.mode)
        header = (tmp_path / "f.csv").read_text().splitlines()[0].split(",")
        assert header[0] == "end_time" and header[-5:] == ["theta", "label", "T", "subject_id",
                                                          "mode"]
