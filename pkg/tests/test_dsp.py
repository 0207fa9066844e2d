"""Preprocessing primitives against independent oracles: naive DFT, analytic
filter responses, and closed-form normalization values."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulseguard import dsp


def naive_dft(x):
    """O(N^2) reference DFT; the oracle for the radix-2 implementation."""
    n = len(x)
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ np.asarray(x, dtype=complex)


def constant_wave(value=5.0, n=1280, rate=128.0):
    return dsp.Waveform(rate, np.full(n, value))


class TestBandpass:
    def test_dc_rejected(self):
        w = constant_wave(5.0, n=128 * 12)
        out = dsp.bandpass(w, 0.4, 8.0)
        settled = out.samples[5 * 128 :]
        assert np.abs(settled).max() < 1e-3 * 5.0

    @pytest.mark.parametrize("freq,lo,hi", [(1.0, 0.05, 1.0), (30.0, 0.0, 0.10)])
    def test_tone_gain_matches_analytic_response(self, freq, lo, hi):
        rate = 128.0
        t = np.arange(int(rate * 40)) / rate
        w = dsp.Waveform(rate, np.sin(2 * np.pi * freq * t))
        out = dsp.bandpass(w, 0.4, 8.0)
        steady = out.samples[int(rate * 20) :]
        measured = np.abs(steady).max()
        analytic = dsp.bandpass_gain(0.4, 8.0, freq, rate)
        assert lo <= measured <= hi
        assert measured == pytest.approx(analytic, rel=0.05)

    def test_invalid_band(self):
        w = constant_wave()
        with pytest.raises(dsp.DspError):
            dsp.bandpass(w, 8.0, 0.4)
        with pytest.raises(dsp.DspError):
            dsp.bandpass(w, 0.4, 70.0)  # above Nyquist

    def test_linearity(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=2000)
        y = rng.normal(size=2000)
        a, b = 2.5, -1.25
        rate = 128.0
        fx = dsp.bandpass(dsp.Waveform(rate, x)).samples
        fy = dsp.bandpass(dsp.Waveform(rate, y)).samples
        fxy = dsp.bandpass(dsp.Waveform(rate, a * x + b * y)).samples
        np.testing.assert_allclose(fxy, a * fx + b * fy, atol=1e-9)

    def test_mask_passes_through(self):
        mask = np.ones(256, dtype=bool)
        mask[10:20] = False
        w = dsp.Waveform(128.0, np.random.default_rng(0).normal(size=256), mask)
        out = dsp.bandpass(w)
        assert np.array_equal(out.quality_mask, mask)


class TestDownsample:
    def test_length_floor(self):
        w = constant_wave(1.0, n=1001, rate=128.0)
        out = dsp.downsample(w, 32.0)
        assert out.samples.size == 1001 // 4
        assert out.sample_rate_hz == 32.0

    def test_constant_stays_constant(self):
        out = dsp.downsample(constant_wave(3.25, n=640), 32.0)
        assert np.all(out.samples == 3.25)

    def test_mask_group_and(self):
        mask = np.ones(16, dtype=bool)
        mask[5] = False  # second group of four
        w = dsp.Waveform(128.0, np.arange(16.0), mask)
        out = dsp.downsample(w, 32.0)
        assert out.quality_mask.tolist() == [True, False, True, True]

    def test_non_integer_ratio_rejected(self):
        with pytest.raises(dsp.DspError):
            dsp.downsample(constant_wave(), 48.0)

    def test_picks_every_kth(self):
        w = dsp.Waveform(128.0, np.arange(12.0))
        out = dsp.downsample(w, 32.0)
        assert out.samples.tolist() == [0.0, 4.0, 8.0]


class TestNormalize:
    def test_known_values(self):
        seg = dsp.Segment("r", 0.0, [1.0, 2.0, 3.0, 4.0])
        out = dsp.normalize(seg)
        np.testing.assert_allclose(
            out.samples, [-1.3416, -0.4472, 0.4472, 1.3416], atol=1e-4
        )
        assert out.normalized and not out.flat
        assert abs(out.samples.mean()) < 1e-9
        assert abs(np.sqrt(np.mean(out.samples**2)) - 1.0) < 1e-6

    def test_flat_segment(self):
        out = dsp.normalize(dsp.Segment("r", 0.0, np.full(16, 2.0)))
        assert out.flat
        assert np.all(out.samples == 0.0)

    def test_idempotent(self):
        seg = dsp.normalize(dsp.Segment("r", 0.0, np.random.default_rng(1).normal(2, 3, 64)))
        again = dsp.normalize(seg)
        np.testing.assert_allclose(again.samples, seg.samples, atol=1e-9)

    @given(
        a=st.floats(0.01, 100.0),
        b=st.floats(-50.0, 50.0),
        seed=st.integers(0, 2**16),
    )
    @settings(max_examples=40, deadline=None)
    def test_affine_invariance(self, a, b, seed):
        x = np.random.default_rng(seed).normal(size=32)
        if np.sqrt(np.mean((x - x.mean()) ** 2)) < 1e-6:
            return
        base = dsp.normalize(dsp.Segment("r", 0.0, x))
        scaled = dsp.normalize(dsp.Segment("r", 0.0, a * x + b))
        np.testing.assert_allclose(scaled.samples, base.samples, atol=1e-6)


class TestSegmentize:
    def test_counts_non_overlapping(self):
        w = dsp.Waveform(32.0, np.random.default_rng(0).normal(size=60 * 32))
        assert len(dsp.segmentize(w)) == 7

    def test_masked_window_dropped(self):
        samples = np.random.default_rng(0).normal(size=60 * 32)
        mask = np.ones_like(samples, dtype=bool)
        mask[10 * 32 : 11 * 32] = False  # t in [10, 11) s
        segs = dsp.segmentize(dsp.Waveform(32.0, samples, mask))
        starts = [s.start_s for s in segs]
        assert 8.0 not in starts
        assert len(segs) == 6

    def test_partial_window_dropped(self):
        w = dsp.Waveform(32.0, np.zeros(int(7.9 * 32)))
        assert dsp.segmentize(w) == []

    def test_round_trip_concatenation(self):
        samples = np.random.default_rng(3).normal(size=24 * 32)
        w = dsp.Waveform(32.0, samples)
        segs = dsp.segmentize(w)
        glued = np.concatenate([s.samples for s in segs])
        np.testing.assert_array_equal(glued, samples[: glued.size])

    def test_segment_metadata(self):
        w = dsp.Waveform(32.0, np.zeros(16 * 32))
        segs = dsp.segmentize(w, record_id="rec7")
        assert [s.start_s for s in segs] == [0.0, 8.0]
        assert all(s.source_record_id == "rec7" for s in segs)
        assert all(s.samples.size == 256 for s in segs)


class TestFft:
    def test_bin_aligned_sinusoid(self):
        n = 256
        k = 10
        x = np.sin(2 * np.pi * k * np.arange(n) / n)
        mags = dsp.fft_magnitude(x)
        assert mags[k] == pytest.approx(n / 2, abs=1e-6)
        others = np.delete(mags, k)
        assert others.max() < 1e-6

    def test_all_ones(self):
        mags = dsp.fft_magnitude(np.ones(64))
        assert mags[0] == pytest.approx(64, abs=1e-9)
        assert mags[1:].max() < 1e-9

    @pytest.mark.parametrize("n", [8, 64, 256, 1024])
    def test_matches_naive_dft(self, n):
        x = np.random.default_rng(n).normal(size=n)
        ours = dsp.fft_radix2(x)
        oracle = naive_dft(x)
        assert np.abs(ours - oracle).max() < 1e-9

    def test_non_power_of_two_rejected(self):
        for bad in (6, 12, 100):
            with pytest.raises(dsp.DspError):
                dsp.fft_magnitude(np.zeros(bad))
        with pytest.raises(dsp.DspError):
            dsp.fft_magnitude(np.zeros(4))  # below the minimum length

    @given(seed=st.integers(0, 2**16), log_n=st.integers(3, 9))
    @settings(max_examples=30, deadline=None)
    def test_parseval(self, seed, log_n):
        n = 2**log_n
        x = np.random.default_rng(seed).normal(size=n)
        mags = dsp.fft_magnitude(x)
        # rebuild the full-spectrum power sum from the real-input half spectrum
        spec_power = mags[0] ** 2 + mags[-1] ** 2 + 2 * np.sum(mags[1:-1] ** 2)
        time_power = np.sum(x**2)
        assert spec_power / n == pytest.approx(time_power, rel=1e-6)


class TestPreprocess:
    def test_settling_masked_and_rate(self):
        w = dsp.Waveform(128.0, np.random.default_rng(0).normal(size=128 * 20))
        out = dsp.preprocess(w)
        assert out.sample_rate_hz == 32.0
        assert not out.quality_mask[: 5 * 32].any()
        assert out.quality_mask[5 * 32 :].all()

    def test_pipeline_segments_skip_settling(self):
        w = dsp.Waveform(128.0, np.random.default_rng(1).normal(size=128 * 30))
        segs = dsp.pipeline_segments(w, record_id="x")
        assert [s.start_s for s in segs] == [8.0, 16.0]
        assert all(s.normalized for s in segs)
