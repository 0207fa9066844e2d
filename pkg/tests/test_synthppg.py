"""Generator contracts: beat scheduling, PVC/AF injection, rendering against the
closed-form template, labels, determinism, and record serialization."""

import json

import numpy as np
import pytest

from pulseguard import dsp, screen
from pulseguard import synthppg as sp


def quiet_cfg(**overrides):
    base = dict(
        duration_s=10.0,
        base_hr_bpm=60.0,
        hrv_sigma=0.0,
        resp_rate_hz=0.25,
        resp_mod_depth=0.0,
        noise_sigma=0.0,
        pvc_rate_per_min=0.0,
        af_episode_rate_per_hour=0.0,
        seed=0,
    )
    base.update(overrides)
    return sp.SynthConfig(**base)


def closed_form_beat(t, onset, ibi, amp=1.0):
    """Independent evaluation of the two-Gaussian beat shape."""
    u = t - onset
    sys = np.exp(-((u - 0.15 * ibi) ** 2) / (2 * (0.06 * ibi) ** 2))
    dic = 0.35 * np.exp(-((u - 0.45 * ibi) ** 2) / (2 * (0.10 * ibi) ** 2))
    out = amp * (sys + dic)
    out[(u < 0) | (u >= ibi)] = 0.0
    return out


class TestBeatSchedule:
    def test_zero_jitter_onsets(self):
        sch = sp.build_beat_schedule(quiet_cfg(), 0)
        np.testing.assert_allclose(sch.onsets, np.arange(10.0), atol=1e-12)
        assert all(k == sp.KIND_SINUS for k in sch.kinds)
        assert np.all(sch.amplitude_scales == 1.0)

    def test_forced_pvc_after_beat_four(self):
        sch = sp.build_beat_schedule(quiet_cfg(), 0)
        sp.inject_pvc(sch, 4)
        # hand-computed from the prematurity/compensatory rule
        assert sch.onsets[5] == pytest.approx(4.6, abs=1e-9)
        assert sch.onsets[6] == pytest.approx(6.0, abs=1e-9)
        assert sch.intervals[4] == pytest.approx(0.6, abs=1e-9)
        assert sch.intervals[5] == pytest.approx(1.4, abs=1e-9)
        assert sch.kinds[5] == sp.KIND_PVC
        assert 0.4 <= sch.amplitude_scales[5] <= 0.6

    def test_low_rate_interval(self):
        sch = sp.build_beat_schedule(quiet_cfg(base_hr_bpm=35.0), 0)
        np.testing.assert_allclose(sch.intervals, 60.0 / 35.0, atol=1e-9)

    def test_duration_too_short(self):
        with pytest.raises(sp.SynthError):
            sp.build_beat_schedule(quiet_cfg(duration_s=0.5), 0)

    def test_jittered_intervals_in_clamp(self):
        cfg = quiet_cfg(duration_s=300.0, hrv_sigma=0.08, base_hr_bpm=75.0)
        sch = sp.build_beat_schedule(cfg, 11)
        assert np.all(sch.intervals > sp.IBI_MIN_S)
        assert np.all(sch.intervals < sp.IBI_MAX_S)
        assert np.all(np.diff(sch.onsets) > 0)

    def test_hrv_is_ar1_with_target_sd(self):
        cfg = quiet_cfg(duration_s=3600.0, hrv_sigma=0.05, base_hr_bpm=60.0)
        sch = sp.build_beat_schedule(cfg, 5)
        eps = sch.intervals / 1.0 - 1.0
        sd = eps.std()
        lag1 = np.corrcoef(eps[:-1], eps[1:])[0, 1]
        assert sd == pytest.approx(0.05, rel=0.15)
        assert lag1 == pytest.approx(0.9, abs=0.05)

    def test_pvc_has_compensatory_pause(self):
        cfg = quiet_cfg(duration_s=600.0, pvc_rate_per_min=4.0, hrv_sigma=0.03, seed=2)
        sch = sp.build_beat_schedule(cfg, 2)
        pvc_idx = [j for j, k in enumerate(sch.kinds) if k == sp.KIND_PVC]
        assert pvc_idx, "seeded schedule should hold PVCs"
        for j in pvc_idx:
            pending = sch.intervals[j - 1] / sp.PVC_PREMATURITY
            assert sch.intervals[j] >= pending - 1e-9

    def test_af_episode_intervals(self):
        cfg = quiet_cfg(
            duration_s=600.0, af_episode_rate_per_hour=30.0, af_episode_len_s=40.0, seed=4
        )
        sch = sp.build_beat_schedule(cfg, 4)
        af_idx = [j for j, k in enumerate(sch.kinds) if k == sp.KIND_AF]
        assert af_idx, "seeded schedule should hold AF beats"
        ratios = sch.intervals[af_idx] / 1.0
        assert np.all(ratios >= 0.6 - 1e-9) and np.all(ratios <= 1.4 + 1e-9)
        amps = sch.amplitude_scales[af_idx]
        assert np.all(amps >= 0.7) and np.all(amps <= 1.1)


class TestRenderWaveform:
    def test_empty_schedule_noise_only(self):
        sch = sp.BeatSchedule(np.empty(0), np.empty(0), [], np.empty(0))
        cfg = quiet_cfg(duration_s=2.0, noise_sigma=0.05)
        w = sp.render_waveform(sch, cfg)
        assert w.samples.size == int(2.0 * cfg.native_rate_hz)
        assert 0.01 < w.samples.std() < 0.1

    def test_single_beat_matches_closed_form(self):
        sch = sp.BeatSchedule(np.array([0.0]), np.array([1.0]), [sp.KIND_SINUS], np.array([1.0]))
        cfg = quiet_cfg(duration_s=1.0)
        w = sp.render_waveform(sch, cfg)
        t = np.arange(w.samples.size) / cfg.native_rate_hz
        oracle = closed_form_beat(t, 0.0, 1.0)
        np.testing.assert_allclose(w.samples, oracle, atol=1e-12)
        assert w.samples.max() == pytest.approx(oracle.max(), abs=1e-6)
        assert oracle.max() == pytest.approx(1.0, abs=5e-3)  # bump overlap adds ~0.4%
        assert t[np.argmax(w.samples)] == pytest.approx(0.15, abs=0.02)

    def test_pvc_peak_scales_linearly(self):
        sch = sp.build_beat_schedule(quiet_cfg(), 0)
        sp.inject_pvc(sch, 4, amplitude_scale=0.5)
        w = sp.render_waveform(sch, quiet_cfg())
        t = np.arange(w.samples.size) / 128.0
        pvc_peak = w.samples[(t >= 4.6) & (t < 5.2)].max()
        sinus_peak = w.samples[(t >= 3.0) & (t < 4.0)].max()
        assert pvc_peak == pytest.approx(0.5 * sinus_peak, rel=0.02)

    def test_respiratory_modulation(self):
        cfg = quiet_cfg(duration_s=20.0, resp_mod_depth=0.3, resp_rate_hz=0.25)
        sch = sp.build_beat_schedule(cfg, 0)
        w = sp.render_waveform(sch, cfg)
        flat = sp.render_waveform(sch, quiet_cfg(duration_s=20.0))
        t = np.arange(w.samples.size) / 128.0
        expected = flat.samples * (1 + 0.3 * np.sin(2 * np.pi * 0.25 * t))
        np.testing.assert_allclose(w.samples, expected, atol=1e-12)


class TestSynthesizeRecord:
    def test_no_events_no_labels(self):
        rec = sp.synthesize_record(quiet_cfg(duration_s=120.0), "r0")
        assert rec.anomaly_intervals == []
        assert all(count == 0 for _, count in rec.gs_minutes)
        assert len(rec.gs_minutes) == 2

    def test_determinism_bit_identical(self, tmp_path):
        cfg = quiet_cfg(
            duration_s=130.0, hrv_sigma=0.03, noise_sigma=0.01,
            pvc_rate_per_min=2.0, af_episode_rate_per_hour=20.0, seed=9,
        )
        a = sp.synthesize_record(cfg, "r")
        b = sp.synthesize_record(cfg, "r")
        assert np.array_equal(a.waveform.samples, b.waveform.samples)
        assert a.anomaly_intervals == b.anomaly_intervals
        assert a.gs_minutes == b.gs_minutes
        sp.save_record(a, tmp_path / "a")
        sp.save_record(b, tmp_path / "b")
        for name in (sp.RECORD_JSON, sp.WAVEFORM_CSV):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_gs_counts_match_schedule(self):
        cfg = quiet_cfg(duration_s=240.0, pvc_rate_per_min=3.0, hrv_sigma=0.02, seed=3)
        rec = sp.synthesize_record(cfg, "r")
        n_pvc = rec.schedule.count(sp.KIND_PVC)
        assert n_pvc >= 3
        assert sum(c for _, c in rec.gs_minutes) == n_pvc

    def test_every_pvc_onset_inside_one_pvc_interval(self):
        cfg = quiet_cfg(duration_s=600.0, pvc_rate_per_min=4.0, hrv_sigma=0.03, seed=8)
        rec = sp.synthesize_record(cfg, "r")
        pvc_intervals = [(s, e) for s, e, k in rec.anomaly_intervals if k == sp.KIND_PVC]
        onsets = [
            o for o, k in zip(rec.schedule.onsets, rec.schedule.kinds) if k == sp.KIND_PVC
        ]
        assert onsets
        for onset in onsets:
            hits = [1 for s, e in pvc_intervals if s <= onset < e]
            assert sum(hits) == 1

    def test_intervals_disjoint_and_bounded(self):
        cfg = quiet_cfg(
            duration_s=900.0, pvc_rate_per_min=5.0, hrv_sigma=0.03,
            af_episode_rate_per_hour=12.0, seed=21,
        )
        rec = sp.synthesize_record(cfg, "r")
        ivs = sorted(rec.anomaly_intervals)
        for (s1, e1, _), (s2, _, _) in zip(ivs, ivs[1:]):
            assert e1 <= s2 + 1e-9
        assert all(0.0 <= s < e <= cfg.duration_s for s, e, _ in ivs)

    def test_spectral_purity_of_clean_records(self):
        # dominant peak within 0.15 Hz of the pulse rate on every 8 s segment
        for i, hr in enumerate((45.0, 75.0, 120.0, 170.0)):
            cfg = quiet_cfg(
                duration_s=40.0, base_hr_bpm=hr, hrv_sigma=0.0, noise_sigma=0.02,
                resp_mod_depth=0.05, seed=30 + i,
            )
            rec = sp.synthesize_record(cfg, "r")
            for seg in dsp.pipeline_segments(rec.waveform, record_id="r"):
                feats = screen.spectral_features(seg)
                assert abs(feats.dominant_freq_hz - hr / 60.0) <= 0.15


class TestValidation:
    def test_bad_hr_rejected(self):
        with pytest.raises(sp.SynthError):
            quiet_cfg(base_hr_bpm=300.0).validate()
        with pytest.raises(sp.SynthError):
            quiet_cfg(base_hr_bpm=20.0).validate()

    def test_nyquist_headroom(self):
        with pytest.raises(sp.SynthError):
            quiet_cfg(base_hr_bpm=180.0, native_rate_hz=10.0).validate()

    def test_schedule_validation_catches_decreasing_onsets(self):
        sch = sp.BeatSchedule(
            np.array([0.0, 0.5, 0.4]), np.array([0.5, 0.5, 0.5]),
            [sp.KIND_SINUS] * 3, np.ones(3),
        )
        with pytest.raises(sp.SynthError):
            sch.validate()


class TestSerialization:
    def test_round_trip(self, tmp_path):
        cfg = quiet_cfg(duration_s=70.0, noise_sigma=0.01, pvc_rate_per_min=2.0, seed=5)
        rec = sp.synthesize_record(cfg, "rt")
        sp.save_record(rec, tmp_path / "rt")
        loaded = sp.load_record(tmp_path / "rt")
        assert loaded.record_id == "rt"
        assert loaded.config == cfg
        np.testing.assert_array_equal(loaded.waveform.samples, rec.waveform.samples)
        assert loaded.anomaly_intervals == rec.anomaly_intervals
        assert loaded.gs_minutes == rec.gs_minutes

    def test_csv_format(self, tmp_path):
        rec = sp.synthesize_record(quiet_cfg(duration_s=2.0), "c")
        sp.save_record(rec, tmp_path / "c")
        text = (tmp_path / "c" / sp.WAVEFORM_CSV).read_text()
        lines = text.splitlines()
        assert lines[0] == "t_seconds,value"
        assert len(lines) == 1 + rec.waveform.samples.size
        assert "\r" not in text and "," in lines[1]
        meta = json.loads((tmp_path / "c" / sp.RECORD_JSON).read_text())
        assert meta["record_id"] == "c"
