"""Sliding-window Pearson correlation between a segment and its reconstruction;
windows falling below the threshold are merged into anomaly regions.

Correlation is offset- and positive-scale-invariant, which is the reason it is
used instead of absolute error: slow amplitude modulation the autoencoder
underfits should not raise alarms. The absolute-error trace is kept only as a
comparison metric for reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dsp import DspChainConfig, Waveform, normalize, segmentize
from .nnet import ModelParams, reconstruct_batch

WINDOW_LEN_S = 0.5
STRIDE_S = 0.25
R_THRESHOLD = 0.6
DEGENERATE_SD = 1e-8

_T_EPS = 1e-9


class DetectorError(ValueError):
    """Bad arguments to a detector operation."""


@dataclass(frozen=True)
class DetectorConfig:
    window_len_s: float = WINDOW_LEN_S
    stride_s: float = STRIDE_S
    threshold: float = R_THRESHOLD

    def validate(self) -> None:
        if self.window_len_s <= 0 or self.stride_s <= 0:
            raise DetectorError("window_len_s and stride_s must be positive")
        if not -1.0 <= self.threshold <= 1.0:
            raise DetectorError("threshold must lie in [-1, 1]")


@dataclass
class CorrelationTrace:
    window_len_s: float
    stride_s: float
    starts: np.ndarray  # window start times, seconds
    r: np.ndarray       # Pearson r per window, in [-1, 1]

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.starts.tolist(), self.r.tolist()))


@dataclass
class AbsErrorTrace:
    window_len_s: float
    stride_s: float
    starts: np.ndarray
    mae: np.ndarray


@dataclass
class AnomalyRegion:
    start_s: float
    end_s: float
    min_r: float
    source_record_id: str = ""

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass
class DetectionResult:
    record_id: str
    regions: list[AnomalyRegion]
    covered: list[tuple[float, float]]  # disjoint intervals of usable signal
    segments_total: int
    segments_flagged: int
    no_coverage: bool = False

    @property
    def covered_s(self) -> float:
        return sum(e - s for s, e in self.covered)


def pearson_r(x, y) -> float:
    """Pearson correlation with degenerate rules: two flat inputs agree (1.0),
    one flat input is uninformative (0.0)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DetectorError(f"pearson_r needs equal-length 1-D inputs, got {x.shape} vs {y.shape}")
    if x.size < 2:
        raise DetectorError("pearson_r needs at least 2 samples")
    xd = x - x.mean()
    yd = y - y.mean()
    sx = np.sqrt(np.mean(xd**2))
    sy = np.sqrt(np.mean(yd**2))
    if sx < DEGENERATE_SD and sy < DEGENERATE_SD:
        return 1.0
    if sx < DEGENERATE_SD or sy < DEGENERATE_SD:
        return 0.0
    return float(np.dot(xd, yd) / np.sqrt(np.dot(xd, xd) * np.dot(yd, yd)))


def _window_starts(n: int, win: int, stride: int) -> int:
    return 0 if n < win else (n - win) // stride + 1


def _windowed(x: np.ndarray, win: int, stride: int) -> np.ndarray:
    return sliding_window_view(x, win)[::stride]


def _windowed_pearson(x: np.ndarray, y: np.ndarray, win: int, stride: int) -> np.ndarray:
    xw = _windowed(x, win, stride)
    yw = _windowed(y, win, stride)
    xd = xw - xw.mean(axis=1, keepdims=True)
    yd = yw - yw.mean(axis=1, keepdims=True)
    sx = np.sqrt(np.mean(xd**2, axis=1))
    sy = np.sqrt(np.mean(yd**2, axis=1))
    num = np.sum(xd * yd, axis=1)
    den = np.sqrt(np.sum(xd**2, axis=1) * np.sum(yd**2, axis=1))
    both_flat = (sx < DEGENERATE_SD) & (sy < DEGENERATE_SD)
    one_flat = ((sx < DEGENERATE_SD) | (sy < DEGENERATE_SD)) & ~both_flat
    safe = ~(both_flat | one_flat)
    r = np.zeros(xw.shape[0])
    r[both_flat] = 1.0
    r[safe] = num[safe] / den[safe]
    return np.clip(r, -1.0, 1.0)


def _check_trace_args(n: int, win: int, stride: int, rate: float,
                      window_len_s: float, stride_s: float) -> None:
    if abs(window_len_s * rate - win) > 1e-9 or win < 2:
        raise DetectorError("window length must cover an integer number (>= 2) of samples")
    if abs(stride_s * rate - stride) > 1e-9 or stride < 1:
        raise DetectorError("stride must cover a positive integer number of samples")
    if win > n:
        raise DetectorError(f"window of {win} samples longer than the {n}-sample input")


def correlation_trace(
    x,
    y,
    window_len_s: float = WINDOW_LEN_S,
    stride_s: float = STRIDE_S,
    rate_hz: float = 32.0,
) -> CorrelationTrace:
    """Pearson r between x and y over sliding windows; the trailing partial
    window is dropped."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DetectorError(f"inputs must be equal-length 1-D, got {x.shape} vs {y.shape}")
    win = round(window_len_s * rate_hz)
    stride = round(stride_s * rate_hz)
    _check_trace_args(x.size, win, stride, rate_hz, window_len_s, stride_s)
    r = _windowed_pearson(x, y, win, stride)
    starts = np.arange(r.size) * (stride / rate_hz)
    return CorrelationTrace(window_len_s, stride_s, starts, r)


def abs_error_trace(
    x,
    y,
    window_len_s: float = WINDOW_LEN_S,
    stride_s: float = STRIDE_S,
    rate_hz: float = 32.0,
) -> AbsErrorTrace:
    """Windowed mean absolute error; comparison metric only, never used to flag."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DetectorError(f"inputs must be equal-length 1-D, got {x.shape} vs {y.shape}")
    win = round(window_len_s * rate_hz)
    stride = round(stride_s * rate_hz)
    _check_trace_args(x.size, win, stride, rate_hz, window_len_s, stride_s)
    mae = np.abs(_windowed(x, win, stride) - _windowed(y, win, stride)).mean(axis=1)
    starts = np.arange(mae.size) * (stride / rate_hz)
    return AbsErrorTrace(window_len_s, stride_s, starts, mae)


def flag_regions(
    trace: CorrelationTrace, threshold: float = R_THRESHOLD, record_id: str = ""
) -> list[AnomalyRegion]:
    """Each window with r < threshold contributes [start, start + window_len);
    intervals overlapping or within one stride of each other merge."""
    regions: list[AnomalyRegion] = []
    gap = trace.stride_s + _T_EPS
    for start, r in zip(trace.starts, trace.r):
        if r >= threshold:
            continue
        end = start + trace.window_len_s
        if regions and start - regions[-1].end_s <= gap:
            last = regions[-1]
            last.end_s = max(last.end_s, end)
            last.min_r = min(last.min_r, float(r))
        else:
            regions.append(AnomalyRegion(float(start), float(end), float(r), record_id))
    return regions


def _merge_adjacent(regions: list[AnomalyRegion], gap: float) -> list[AnomalyRegion]:
    merged: list[AnomalyRegion] = []
    for reg in sorted(regions, key=lambda r: r.start_s):
        if merged and reg.start_s - merged[-1].end_s <= gap:
            last = merged[-1]
            last.end_s = max(last.end_s, reg.end_s)
            last.min_r = min(last.min_r, reg.min_r)
        else:
            merged.append(reg)
    return merged


def detect(
    model: ModelParams,
    waveform: Waveform,
    det_cfg: DetectorConfig = DetectorConfig(),
    dsp_cfg: DspChainConfig = DspChainConfig(),
    record_id: str = "",
) -> DetectionResult:
    """Detection over one preprocessed waveform (already at the pipeline rate):
    segmentize, normalize, reconstruct, correlate, flag, and map region times
    back to record time. Regions from consecutive segments merge when the gap
    does not exceed one stride."""
    det_cfg.validate()
    segs = segmentize(waveform, dsp_cfg.segment_len_s, dsp_cfg.segment_stride_s, record_id)
    if not segs:
        return DetectionResult(record_id, [], [], 0, 0, no_coverage=True)
    normed = [normalize(s) for s in segs]
    X = np.stack([s.samples for s in normed])
    recon = reconstruct_batch(model, X)
    regions: list[AnomalyRegion] = []
    flagged = 0
    for seg, rec in zip(normed, recon):
        trace = correlation_trace(
            seg.samples, rec, det_cfg.window_len_s, det_cfg.stride_s, seg.sample_rate_hz
        )
        seg_regions = flag_regions(trace, det_cfg.threshold, record_id)
        if seg_regions:
            flagged += 1
            for reg in seg_regions:
                reg.start_s += seg.start_s
                reg.end_s += seg.start_s
            regions.extend(seg_regions)
    regions = _merge_adjacent(regions, det_cfg.stride_s + _T_EPS)
    covered = _merge_intervals(
        [(s.start_s, s.start_s + s.duration_s) for s in segs]
    )
    return DetectionResult(
        record_id=record_id,
        regions=regions,
        covered=covered,
        segments_total=len(segs),
        segments_flagged=flagged,
    )


def _merge_intervals(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[tuple[float, float]] = []
    for s, e in sorted(intervals):
        if out and s - out[-1][1] <= _T_EPS:
            out[-1] = (out[-1][0], max(out[-1][1], e))
        else:
            out.append((s, e))
    return out
