"""Waveform preprocessing: band-pass filtering, integer downsampling, per-segment
z-score normalization, quality-gated segmentation, and a radix-2 FFT primitive.

The pipeline rate is 32 Hz so that 8-second segments are 256 samples (a power of
two) and half-second correlation windows are exactly 16 samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import butter, lfilter

PIPELINE_RATE_HZ = 32.0
SEGMENT_LEN_S = 8.0
BAND_LOW_HZ = 0.4
BAND_HIGH_HZ = 8.0
SETTLE_S = 5.0

FLAT_SD = 1e-8


class DspError(ValueError):
    """Invalid argument or precondition violation in a DSP operation."""


@dataclass
class Waveform:
    """Uniformly sampled signal with a per-sample usability mask."""

    sample_rate_hz: float
    samples: np.ndarray
    quality_mask: np.ndarray | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DspError("samples must be a nonempty 1-D sequence")
        if not self.sample_rate_hz > 0:
            raise DspError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if self.quality_mask is None:
            self.quality_mask = np.ones(self.samples.size, dtype=bool)
        else:
            self.quality_mask = np.asarray(self.quality_mask, dtype=bool)
            if self.quality_mask.shape != self.samples.shape:
                raise DspError("quality_mask must have the same length as samples")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass
class Segment:
    """Fixed-length window of a waveform; the autoencoder's unit of work."""

    source_record_id: str
    start_s: float
    samples: np.ndarray
    sample_rate_hz: float = PIPELINE_RATE_HZ
    normalized: bool = False
    flat: bool = False

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DspError("segment samples must be a nonempty 1-D sequence")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class DspChainConfig:
    """Parameters of the record preprocessing chain."""

    band_low_hz: float = BAND_LOW_HZ
    band_high_hz: float = BAND_HIGH_HZ
    pipeline_rate_hz: float = PIPELINE_RATE_HZ
    settle_s: float = SETTLE_S
    segment_len_s: float = SEGMENT_LEN_S
    segment_stride_s: float = SEGMENT_LEN_S

    def validate(self) -> None:
        if not 0 < self.band_low_hz < self.band_high_hz:
            raise DspError("band edges must satisfy 0 < low < high")
        if not self.band_high_hz < self.pipeline_rate_hz / 2:
            raise DspError("band_high_hz must stay below the pipeline Nyquist rate")
        if self.settle_s < 0:
            raise DspError("settle_s must be non-negative")
        n = self.pipeline_rate_hz * self.segment_len_s
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise DspError("pipeline_rate_hz * segment_len_s must be a positive integer")


def bandpass(w: Waveform, low_hz: float = BAND_LOW_HZ, high_hz: float = BAND_HIGH_HZ) -> Waveform:
    """Causal band-pass: 2nd-order Butterworth high-pass at low_hz followed by a
    2nd-order Butterworth low-pass at high_hz (bilinear-transform biquads run as
    direct-form-II-transposed recurrences). The quality mask passes through.
    """
    if not (0 < low_hz < high_hz < w.sample_rate_hz / 2):
        raise DspError(
            f"invalid band [{low_hz}, {high_hz}] Hz for sample rate {w.sample_rate_hz} Hz"
        )
    b_hp, a_hp = butter(2, low_hz, btype="highpass", fs=w.sample_rate_hz)
    b_lp, a_lp = butter(2, high_hz, btype="lowpass", fs=w.sample_rate_hz)
    y = lfilter(b_lp, a_lp, lfilter(b_hp, a_hp, w.samples))
    return Waveform(w.sample_rate_hz, y, w.quality_mask.copy())


def biquad_response(b: np.ndarray, a: np.ndarray, freq_hz: float, rate_hz: float) -> complex:
    """Frequency response of one biquad evaluated directly from its coefficients."""
    z = np.exp(-2j * np.pi * freq_hz / rate_hz)
    num = b[0] + b[1] * z + b[2] * z * z
    den = a[0] + a[1] * z + a[2] * z * z
    return num / den


def bandpass_gain(low_hz: float, high_hz: float, freq_hz: float, rate_hz: float) -> float:
    """Magnitude of the cascade implemented by :func:`bandpass` at one frequency."""
    b_hp, a_hp = butter(2, low_hz, btype="highpass", fs=rate_hz)
    b_lp, a_lp = butter(2, high_hz, btype="lowpass", fs=rate_hz)
    return abs(biquad_response(b_hp, a_hp, freq_hz, rate_hz)) * abs(
        biquad_response(b_lp, a_lp, freq_hz, rate_hz)
    )


def downsample(w: Waveform, target_hz: float) -> Waveform:
    """Keep every k-th sample, k = rate ratio; the mask is ANDed over each group."""
    ratio = w.sample_rate_hz / target_hz
    k = round(ratio)
    if k < 1 or abs(ratio - k) > 1e-9:
        raise DspError(
            f"sample rate {w.sample_rate_hz} Hz is not an integer multiple of {target_hz} Hz"
        )
    n_out = w.samples.size // k
    if n_out == 0:
        raise DspError("waveform shorter than one downsampling group")
    samples = w.samples[: n_out * k : k].copy()
    mask = w.quality_mask[: n_out * k].reshape(n_out, k).all(axis=1)
    return Waveform(target_hz, samples, mask)


def normalize(seg: Segment) -> Segment:
    """Per-segment z-score with the population standard deviation.

    Segments with sd below FLAT_SD become all zeros and are marked flat.
    """
    mean = float(np.mean(seg.samples))
    sd = float(np.sqrt(np.mean((seg.samples - mean) ** 2)))
    if sd < FLAT_SD:
        return replace(seg, samples=np.zeros_like(seg.samples), normalized=True, flat=True)
    return replace(seg, samples=(seg.samples - mean) / sd, normalized=True, flat=False)


def segmentize(
    w: Waveform,
    len_s: float = SEGMENT_LEN_S,
    stride_s: float = SEGMENT_LEN_S,
    record_id: str = "",
) -> list[Segment]:
    """Cut fixed-length windows; a window is emitted only if its mask is all true.

    The trailing partial window is dropped.
    """
    n_win = w.sample_rate_hz * len_s
    n_stride = w.sample_rate_hz * stride_s
    if abs(n_win - round(n_win)) > 1e-9 or round(n_win) < 1:
        raise DspError("sample_rate_hz * len_s must be a positive integer")
    if abs(n_stride - round(n_stride)) > 1e-9 or round(n_stride) < 1:
        raise DspError("sample_rate_hz * stride_s must be a positive integer")
    n_win, n_stride = round(n_win), round(n_stride)
    out = []
    for start in range(0, w.samples.size - n_win + 1, n_stride):
        if w.quality_mask[start : start + n_win].all():
            out.append(
                Segment(
                    source_record_id=record_id,
                    start_s=start / w.sample_rate_hz,
                    samples=w.samples[start : start + n_win].copy(),
                    sample_rate_hz=w.sample_rate_hz,
                )
            )
    return out


def preprocess(w: Waveform, cfg: DspChainConfig = DspChainConfig()) -> Waveform:
    """Band-pass at the native rate, downsample to the pipeline rate, and mask the
    filter settling transient at the start of the record."""
    cfg.validate()
    filtered = bandpass(w, cfg.band_low_hz, cfg.band_high_hz)
    down = downsample(filtered, cfg.pipeline_rate_hz)
    n_settle = min(int(round(cfg.settle_s * cfg.pipeline_rate_hz)), down.samples.size)
    if n_settle > 0:
        down.quality_mask[:n_settle] = False
    return down


def pipeline_segments(
    w: Waveform,
    cfg: DspChainConfig = DspChainConfig(),
    record_id: str = "",
    normalized: bool = True,
) -> list[Segment]:
    """Full chain for one record: preprocess, segmentize, optionally z-score."""
    down = preprocess(w, cfg)
    segs = segmentize(down, cfg.segment_len_s, cfg.segment_stride_s, record_id)
    if normalized:
        segs = [normalize(s) for s in segs]
    return segs


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis.

    Length must be a power of two. Accepts batched input; returns complex128.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if n < 2 or n & (n - 1):
        raise DspError(f"FFT length must be a power of two >= 2, got {n}")
    a = np.asarray(x, dtype=np.complex128)[..., _bit_reverse_indices(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(a.shape[:-1] + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        a = np.concatenate((even + odd, even - odd), axis=-1).reshape(a.shape[:-1] + (n,))
        size *= 2
    return a


def fft_magnitude(samples: np.ndarray) -> np.ndarray:
    """Magnitudes |X_k| for k = 0..N/2 of a real input of power-of-two length >= 8."""
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[-1]
    if n < 8 or n & (n - 1):
        raise DspError(f"input length must be a power of two >= 8, got {n}")
    return np.abs(fft_radix2(samples)[..., : n // 2 + 1])
