"""Reproducible synthetic PPG records with labeled PVC and AF events.

A record is built in two stages: a beat schedule (onset times, per-beat kind and
amplitude scale) and a rendered waveform (two Gaussian bumps per beat, respiratory
amplitude modulation, additive white noise). Ground-truth anomaly intervals and
per-minute PVC counts come straight from the schedule, playing the role of a
bedside monitor's event log.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dsp import Waveform

KIND_SINUS = "sinus"
KIND_PVC = "pvc"
KIND_AF = "af"

# Hard physiological clamp on inter-beat intervals: 20..220 bpm.
IBI_MIN_S = 60.0 / 220.0
IBI_MAX_S = 60.0 / 20.0

# AR(1) coefficient for heart-rate-variability wander of sinus intervals.
HRV_AR_COEFF = 0.9

# PVC shape: the ectopic beat arrives early and small, then a compensatory pause
# restores the second-next sinus onset.
PVC_PREMATURITY = 0.6
PVC_AMP_RANGE = (0.4, 0.6)
AF_IBI_RANGE = (0.6, 1.4)
AF_AMP_RANGE = (0.7, 1.1)

# Beat morphology: systolic peak plus dicrotic wave, both scaled to the local IBI.
SYSTOLIC_CENTER = 0.15
SYSTOLIC_SD = 0.06
DICROTIC_HEIGHT = 0.35
DICROTIC_CENTER = 0.45
DICROTIC_SD = 0.10

RECORD_JSON = "record.json"
WAVEFORM_CSV = "waveform.csv"


class SynthError(ValueError):
    """Invalid generator configuration or schedule."""


@dataclass(frozen=True)
class SynthConfig:
    duration_s: float = 300.0
    base_hr_bpm: float = 70.0
    hrv_sigma: float = 0.03
    resp_rate_hz: float = 0.25
    resp_mod_depth: float = 0.08
    noise_sigma: float = 0.01
    pvc_rate_per_min: float = 0.0
    af_episode_rate_per_hour: float = 0.0
    af_episode_len_s: float = 30.0
    native_rate_hz: float = 128.0
    seed: int = 0

    def validate(self) -> None:
        if not self.duration_s > 0:
            raise SynthError(f"duration_s must be positive, got {self.duration_s}")
        if not 35.0 <= self.base_hr_bpm <= 180.0:
            raise SynthError(f"base_hr_bpm must lie in [35, 180], got {self.base_hr_bpm}")
        if self.hrv_sigma < 0:
            raise SynthError(f"hrv_sigma must be non-negative, got {self.hrv_sigma}")
        if self.resp_rate_hz < 0 or self.resp_mod_depth < 0:
            raise SynthError("resp_rate_hz and resp_mod_depth must be non-negative")
        if self.noise_sigma < 0:
            raise SynthError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.pvc_rate_per_min < 0:
            raise SynthError(f"pvc_rate_per_min must be non-negative, got {self.pvc_rate_per_min}")
        if self.af_episode_rate_per_hour < 0:
            raise SynthError("af_episode_rate_per_hour must be non-negative")
        if self.af_episode_len_s <= 0:
            raise SynthError(f"af_episode_len_s must be positive, got {self.af_episode_len_s}")
        if self.native_rate_hz < 4.0 * (self.base_hr_bpm / 60.0):
            raise SynthError(
                f"native_rate_hz {self.native_rate_hz} below 4x the pulse frequency "
                f"of {self.base_hr_bpm} bpm"
            )


@dataclass
class BeatSchedule:
    """Beat onsets with per-beat kind, amplitude scale, and inter-beat interval.

    The interval of beat k runs from onsets[k] to the next onset; the last beat
    keeps its drawn interval, which may extend past the record end.
    """

    onsets: np.ndarray
    intervals: np.ndarray
    kinds: list[str]
    amplitude_scales: np.ndarray

    def __post_init__(self):
        self.onsets = np.asarray(self.onsets, dtype=np.float64)
        self.intervals = np.asarray(self.intervals, dtype=np.float64)
        self.amplitude_scales = np.asarray(self.amplitude_scales, dtype=np.float64)

    def __len__(self) -> int:
        return self.onsets.size

    def validate(self) -> None:
        n = len(self)
        if not (self.intervals.size == n and len(self.kinds) == n and self.amplitude_scales.size == n):
            raise SynthError("schedule fields must have equal lengths")
        if n and np.any(np.diff(self.onsets) <= 0):
            raise SynthError("beat onsets must be strictly increasing")
        if n and (np.any(self.intervals <= IBI_MIN_S) or np.any(self.intervals >= IBI_MAX_S)):
            raise SynthError("inter-beat interval outside the physiological clamp")
        if np.any(self.amplitude_scales <= 0):
            raise SynthError("amplitude scales must be positive")
        for j, kind in enumerate(self.kinds):
            if kind == KIND_PVC:
                # Compensatory pause: at least as long as the nearby sinus interval.
                local = self.intervals[j - 1] / PVC_PREMATURITY if j > 0 else self.intervals[j]
                if self.intervals[j] < local - 1e-9:
                    raise SynthError(f"PVC at beat {j} lacks a compensatory pause")

    def count(self, kind: str) -> int:
        return sum(1 for k in self.kinds if k == kind)


@dataclass
class LabeledRecord:
    record_id: str
    config: SynthConfig
    waveform: Waveform
    anomaly_intervals: list[tuple[float, float, str]]
    gs_minutes: list[tuple[int, int]]
    schedule: BeatSchedule | None = None


def _sinus_ibi_stream(cfg: SynthConfig, rng: np.random.Generator):
    """Yield AR(1)-jittered sinus intervals with stationary sd = hrv_sigma."""
    base = 60.0 / cfg.base_hr_bpm
    eps = rng.normal(0.0, cfg.hrv_sigma)
    innovation_sd = cfg.hrv_sigma * np.sqrt(1.0 - HRV_AR_COEFF**2)
    while True:
        ibi = base * (1.0 + eps)
        yield float(np.clip(ibi, IBI_MIN_S + 1e-6, IBI_MAX_S - 1e-6))
        eps = HRV_AR_COEFF * eps + rng.normal(0.0, innovation_sd)


def build_beat_schedule(cfg: SynthConfig, rng_seed) -> BeatSchedule:
    """Lay out sinus beats, then overlay AF episodes and insert Poisson PVCs.

    Events that would overlap each other or violate the interval clamp are
    rejected so labels stay unambiguous.
    """
    cfg.validate()
    rng = np.random.default_rng(rng_seed)
    base = 60.0 / cfg.base_hr_bpm
    if cfg.duration_s < base:
        raise SynthError(
            f"duration {cfg.duration_s} s too short to hold one beat at {cfg.base_hr_bpm} bpm"
        )

    # AF episode spans, non-overlapping by rejection.
    n_af = rng.poisson(cfg.af_episode_rate_per_hour * cfg.duration_s / 3600.0)
    af_spans: list[tuple[float, float]] = []
    if n_af > 0:
        starts = np.sort(rng.uniform(0.0, cfg.duration_s, size=n_af))
        for s in starts:
            e = min(s + cfg.af_episode_len_s, cfg.duration_s)
            if af_spans and s <= af_spans[-1][1]:
                continue
            af_spans.append((float(s), float(e)))

    def in_af(t: float) -> bool:
        return any(s <= t < e for s, e in af_spans)

    sinus = _sinus_ibi_stream(cfg, rng)
    onsets = [0.0]
    intervals: list[float] = []
    kinds: list[str] = []
    amps: list[float] = []
    while True:
        t = onsets[-1]
        if in_af(t):
            ibi = float(
                np.clip(base * rng.uniform(*AF_IBI_RANGE), IBI_MIN_S + 1e-6, IBI_MAX_S - 1e-6)
            )
            kinds.append(KIND_AF)
            amps.append(float(rng.uniform(*AF_AMP_RANGE)))
        else:
            ibi = next(sinus)
            kinds.append(KIND_SINUS)
            amps.append(1.0)
        intervals.append(ibi)
        if t + ibi >= cfg.duration_s:
            break
        onsets.append(t + ibi)

    schedule = BeatSchedule(np.array(onsets), np.array(intervals), kinds, np.array(amps))

    # PVCs as a Poisson process; each event converts the beat after the one whose
    # interval contains the event time.
    n_pvc = rng.poisson(cfg.pvc_rate_per_min * cfg.duration_s / 60.0)
    if n_pvc > 0:
        for tau in np.sort(rng.uniform(0.0, cfg.duration_s, size=n_pvc)):
            k = int(np.searchsorted(schedule.onsets, tau, side="right") - 1)
            amp = float(rng.uniform(*PVC_AMP_RANGE))
            _try_insert_pvc(schedule, k, amp)

    schedule.validate()
    return schedule


def _try_insert_pvc(schedule: BeatSchedule, k: int, amplitude_scale: float) -> bool:
    """Convert beat k+1 into a PVC arriving at PVC_PREMATURITY into beat k's interval.

    Beat k+2's onset is preserved, which yields the compensatory pause. Returns
    False (schedule untouched) when the site is unusable: near the record edge,
    adjacent to another event, or an interval would leave the clamp.
    """
    n = len(schedule)
    if k < 0 or k + 2 >= n:
        return False
    if any(schedule.kinds[j] != KIND_SINUS for j in (k, k + 1, k + 2)):
        return False
    if k > 0 and schedule.kinds[k - 1] == KIND_PVC:
        return False
    pending = schedule.intervals[k]
    early = PVC_PREMATURITY * pending
    pause = schedule.onsets[k + 2] - (schedule.onsets[k] + early)
    if early <= IBI_MIN_S + 1e-6 or pause >= IBI_MAX_S - 1e-6:
        return False
    if pause < pending:  # heavy jitter can leave no room for a true pause
        return False
    schedule.onsets[k + 1] = schedule.onsets[k] + early
    schedule.intervals[k] = early
    schedule.intervals[k + 1] = pause
    schedule.kinds[k + 1] = KIND_PVC
    schedule.amplitude_scales[k + 1] = amplitude_scale
    return True


def inject_pvc(schedule: BeatSchedule, after_beat: int, amplitude_scale: float = 0.5) -> BeatSchedule:
    """Deterministically convert the beat following `after_beat` into a PVC.

    Raises when the site is unusable; useful for constructing labeled fixtures.
    """
    if not _try_insert_pvc(schedule, after_beat, amplitude_scale):
        raise SynthError(f"cannot insert a PVC after beat {after_beat}")
    schedule.validate()
    return schedule


def render_waveform(schedule: BeatSchedule, cfg: SynthConfig, noise_seed=None) -> Waveform:
    """Render beats as two Gaussian bumps each, confined to the beat's own interval,
    with respiratory amplitude modulation and additive white Gaussian noise."""
    cfg.validate()
    rate = cfg.native_rate_hz
    n = int(round(cfg.duration_s * rate))
    if n < 1:
        raise SynthError("duration too short for one sample")
    t = np.arange(n) / rate
    signal = np.zeros(n)
    for onset, ibi, amp in zip(schedule.onsets, schedule.intervals, schedule.amplitude_scales):
        i0 = int(np.ceil(onset * rate - 1e-9))
        i1 = min(int(np.ceil((onset + ibi) * rate - 1e-9)), n)
        if i0 >= i1:
            continue
        u = t[i0:i1] - onset
        signal[i0:i1] += amp * beat_template(u, ibi)
    if cfg.resp_mod_depth > 0:
        signal *= 1.0 + cfg.resp_mod_depth * np.sin(2.0 * np.pi * cfg.resp_rate_hz * t)
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(cfg.seed if noise_seed is None else noise_seed)
        signal += rng.normal(0.0, cfg.noise_sigma, size=n)
    return Waveform(rate, signal)


def beat_template(u: np.ndarray, ibi: float) -> np.ndarray:
    """Unit-amplitude beat shape on the beat-local time axis u in [0, ibi)."""
    sys_sd = SYSTOLIC_SD * ibi
    dic_sd = DICROTIC_SD * ibi
    return np.exp(-((u - SYSTOLIC_CENTER * ibi) ** 2) / (2.0 * sys_sd**2)) + (
        DICROTIC_HEIGHT * np.exp(-((u - DICROTIC_CENTER * ibi) ** 2) / (2.0 * dic_sd**2))
    )


def _anomaly_intervals(schedule: BeatSchedule, duration_s: float) -> list[tuple[float, float, str]]:
    """PVC beats span onset..end-of-pause; contiguous AF beats merge into episodes."""
    out: list[tuple[float, float, str]] = []
    j = 0
    n = len(schedule)
    while j < n:
        kind = schedule.kinds[j]
        if kind == KIND_SINUS:
            j += 1
            continue
        start = float(schedule.onsets[j])
        end = float(schedule.onsets[j] + schedule.intervals[j])
        if kind == KIND_AF:
            while j + 1 < n and schedule.kinds[j + 1] == KIND_AF:
                j += 1
                end = float(schedule.onsets[j] + schedule.intervals[j])
        out.append((max(0.0, start), min(end, duration_s), kind))
        j += 1
    return out


def _gs_minutes(schedule: BeatSchedule, duration_s: float) -> list[tuple[int, int]]:
    n_minutes = int(np.ceil(duration_s / 60.0))
    counts = [0] * n_minutes
    for onset, kind in zip(schedule.onsets, schedule.kinds):
        if kind == KIND_PVC and onset < duration_s:
            counts[min(int(onset // 60.0), n_minutes - 1)] += 1
    return list(enumerate(counts))


def synthesize_record(cfg: SynthConfig, record_id: str = "record") -> LabeledRecord:
    """Schedule plus rendering plus labels; deterministic given (cfg, cfg.seed)."""
    cfg.validate()
    schedule_seed, noise_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    schedule = build_beat_schedule(cfg, schedule_seed)
    waveform = render_waveform(schedule, cfg, noise_seed=noise_seed)
    return LabeledRecord(
        record_id=record_id,
        config=cfg,
        waveform=waveform,
        anomaly_intervals=_anomaly_intervals(schedule, cfg.duration_s),
        gs_minutes=_gs_minutes(schedule, cfg.duration_s),
        schedule=schedule,
    )


def save_record(record: LabeledRecord, directory: str | Path) -> Path:
    """Write record.json (metadata and labels) and waveform.csv (t_seconds,value)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "record_id": record.record_id,
        "config": asdict(record.config),
        "anomaly_intervals": [[s, e, k] for s, e, k in record.anomaly_intervals],
        "gs_minutes": [[m, c] for m, c in record.gs_minutes],
        "n_beats": len(record.schedule) if record.schedule is not None else None,
        "n_pvc_beats": record.schedule.count(KIND_PVC) if record.schedule is not None else None,
    }
    (directory / RECORD_JSON).write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    rate = record.waveform.sample_rate_hz
    buf = io.StringIO()
    buf.write("t_seconds,value\n")
    for i, v in enumerate(record.waveform.samples):
        buf.write(f"{i / rate!r},{v!r}\n")
    (directory / WAVEFORM_CSV).write_text(buf.getvalue(), encoding="utf-8", newline="\n")
    return directory


def load_record(directory: str | Path) -> LabeledRecord:
    directory = Path(directory)
    meta = json.loads((directory / RECORD_JSON).read_text(encoding="utf-8"))
    cfg = SynthConfig(**meta["config"])
    values = []
    with open(directory / WAVEFORM_CSV, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["t_seconds", "value"]:
            raise SynthError(f"unexpected waveform header {header!r} in {directory}")
        for row in reader:
            values.append(float(row[1]))
    return LabeledRecord(
        record_id=meta["record_id"],
        config=cfg,
        waveform=Waveform(cfg.native_rate_hz, np.array(values)),
        anomaly_intervals=[(s, e, k) for s, e, k in meta["anomaly_intervals"]],
        gs_minutes=[(m, c) for m, c in meta["gs_minutes"]],
        schedule=None,
    )
