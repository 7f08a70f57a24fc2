"""Tests for CPSC frames, the doubly-selective channel and Viterbi detection."""

import numpy as np
import pytest

from fadecast.cpsc import (
    apply_doubly_selective,
    build_frame,
    pad_window,
    payload_length,
    run_cpsc,
    viterbi_detect,
)
from fadecast.fading import apply_channel, complex_normal, make_rng
from fadecast.modem import gray_qam, ml_detect
from fadecast.predictor import PredictorNet
from helpers import brute_force_ml

QAM4 = gray_qam(4)


class TestFrame:
    @pytest.mark.parametrize("n_p,n_c", [(2, 122), (4, 116)])
    def test_payload_length(self, n_p, n_c):
        frame = build_frame(128, 2, n_p, np.ones(n_c))
        assert frame.n_c == n_c == payload_length(128, 2, n_p)
        assert len(frame.payload) == n_c and len(frame.transmitted) == 129

    def test_layout(self):
        data = QAM4.points[[0, 1, 2, 3, 0, 1]]
        frame = build_frame(12, 2, 2, data, pilot=1.0)
        np.testing.assert_array_equal(frame.body[:6], [0, 1, 0, 0, 1, 0])
        np.testing.assert_array_equal(frame.payload, data)
        np.testing.assert_array_equal(frame.cp, frame.body[-1:])

    def test_flat_frame_is_pure_data(self):
        data = QAM4.points[[1, 2, 3]]
        frame = build_frame(3, 1, 0, data)
        assert frame.cp.size == 0
        np.testing.assert_array_equal(frame.transmitted, data)

    def test_capacity(self):
        with pytest.raises(ValueError):
            build_frame(6, 2, 2, [])
        with pytest.raises(ValueError):
            build_frame(10, 2, 1, np.ones(3))


class TestChannel:
    def test_circular_convolution(self):
        rng = make_rng(1)
        data = QAM4.points[rng.integers(0, 4, 27)]
        frame = build_frame(32, 3, 1, data)
        g = complex_normal(rng, 3)
        y = apply_doubly_selective(frame, [np.full(32, v) for v in g], 0.0)
        kernel = np.zeros(32, dtype=complex)
        kernel[:3] = g
        np.testing.assert_allclose(y, np.fft.ifft(np.fft.fft(frame.body) * np.fft.fft(kernel)), atol=1e-12)

    def test_one_tap_equalization_recovers_body(self):
        rng = make_rng(2)
        frame = build_frame(16, 2, 1, QAM4.points[rng.integers(0, 4, 13)])
        g = complex_normal(rng, 2)
        y = apply_doubly_selective(frame, [np.full(16, v) for v in g], 0.0)
        kernel = np.zeros(16, dtype=complex)
        kernel[:2] = g
        np.testing.assert_allclose(np.fft.ifft(np.fft.fft(y) / np.fft.fft(kernel)), frame.body, atol=1e-12)

    def test_single_tap_reduces_to_flat_channel(self):
        rng = make_rng(3)
        frame = build_frame(20, 1, 2, QAM4.points[rng.integers(0, 4, 18)])
        h = complex_normal(rng, 20)
        np.testing.assert_allclose(apply_doubly_selective(frame, [h], 0.3, seed=5),
                                   apply_channel(frame.body, h, 0.3, seed=5))

    def test_noise_variance(self):
        frame = build_frame(50_000, 2, 1, np.zeros(49_997))
        y = apply_doubly_selective(frame, [np.zeros(50_000)] * 2, 0.25, seed=1)
        assert np.var(y) == pytest.approx(0.25, rel=0.03)

    def test_shape_errors(self):
        frame = build_frame(8, 2, 1, np.ones(5))
        with pytest.raises(ValueError):
            apply_doubly_selective(frame, [np.ones(8)], 0.0)
        with pytest.raises(ValueError):
            apply_doubly_selective(frame, [np.ones(8), np.ones(7)], 0.0)


class TestViterbi:
    @pytest.mark.parametrize("seed", range(100))
    def test_matches_brute_force(self, seed):
        rng = make_rng(seed)
        n, l_taps = 8, 2
        taps = complex_normal(rng, (l_taps, n))
        prefix = QAM4.points[rng.integers(0, 4, l_taps - 1)]
        x = QAM4.points[rng.integers(0, 4, n)]
        s = np.concatenate([prefix, x])
        y = sum(taps[l] * s[l_taps - 1 - l:l_taps - 1 - l + n] for l in range(l_taps))
        y = y + complex_normal(rng, n, 0.5)
        got = viterbi_detect(y, taps.T, QAM4, prefix=prefix[::-1])
        np.testing.assert_array_equal(got, brute_force_ml(y, taps, QAM4.points, prefix))

    def test_three_taps_small_frame(self):
        rng = make_rng(7)
        taps = complex_normal(rng, (3, 5))
        prefix = QAM4.points[[2, 1]]  # earliest first
        y = complex_normal(rng, 5)
        got = viterbi_detect(y, taps.T, QAM4, prefix=prefix[::-1])
        np.testing.assert_array_equal(got, brute_force_ml(y, taps, QAM4.points, prefix))

    def test_single_tap_is_symbolwise_ml(self):
        rng = make_rng(4)
        h = complex_normal(rng, 40)
        y = complex_normal(rng, 40)
        np.testing.assert_array_equal(viterbi_detect(y, h[:, None], QAM4), ml_detect(y, h, QAM4)[0])

    def test_batch_matches_single(self):
        rng = make_rng(5)
        y, taps = complex_normal(rng, (3, 10)), complex_normal(rng, (3, 10, 2))
        out = viterbi_detect(y, taps, QAM4)
        for b in range(3):
            np.testing.assert_array_equal(out[b], viterbi_detect(y[b], taps[b], QAM4))

    def test_custom_metric(self):
        y = np.array([0.7 + 0.7j, -0.7 - 0.7j])
        taps = np.ones((2, 1))
        flipped = viterbi_detect(y, taps, QAM4, metric=lambda a, b: -np.abs(a - b) ** 2)
        assert not np.array_equal(flipped, viterbi_detect(y, taps, QAM4))

    def test_argument_errors(self):
        with pytest.raises(ValueError):
            viterbi_detect(np.ones(4), np.ones((3, 2)), QAM4)
        with pytest.raises(ValueError):
            viterbi_detect(np.ones(4), np.ones((4, 2)), QAM4, prefix=[1, 2])


class TestEndToEnd:
    def test_pad_window(self):
        np.testing.assert_array_equal(pad_window([[1, 2]], 4), [[1, 1, 1, 2]])
        np.testing.assert_array_equal(pad_window([[1, 2, 3]], 2), [[2, 3]])

    def test_perfect_csi_high_snr(self):
        r = run_cpsc(None, QAM4, 50.0, 30.0, 2, 200, seed=1, csi="perfect", min_errors=None)
        assert r.ber < 1e-3
        assert r.bits_sent == 200 * 122 * 2

    def test_perfect_csi_ignores_pilot_count_except_payload(self):
        r = run_cpsc(None, QAM4, 50.0, 10.0, 4, 50, seed=1, csi="perfect", min_errors=None)
        assert r.bits_sent == 50 * 116 * 2

    def test_predicted_csi_runs(self):
        net = PredictorNet.initialize(4, window_n=10, seed=1)
        r = run_cpsc(net, QAM4, 50.0, 20.0, 2, 30, seed=2, min_errors=None)
        assert r.trials == 30 and 0 <= r.ber <= 1 and r.prediction_mse > 0

    def test_argument_errors(self):
        with pytest.raises(ValueError):
            run_cpsc(None, QAM4, 50.0, 10.0, 2, 10)
        with pytest.raises(ValueError):
            run_cpsc(None, QAM4, 50.0, 10.0, 0, 10, csi="perfect")
        with pytest.raises(ValueError):
            run_cpsc(None, QAM4, 50.0, 10.0, 2, 10, csi="guess")
