"""Dependency-free SVG overlays: input segment, reconstruction, correlation
trace, and shaded flagged regions. SVG keeps the artifacts textual and
diffable."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .detector import AnomalyRegion, CorrelationTrace

_W, _H = 760, 360
_PAD = 40
_SIGNAL_H = 200
_TRACE_H = 90


def _polyline(xs, ys, color: str, width: float = 1.2) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{pts}"/>'
    )


def _scale(values: np.ndarray, lo_px: float, hi_px: float) -> np.ndarray:
    vmin, vmax = float(values.min()), float(values.max())
    span = vmax - vmin if vmax > vmin else 1.0
    return hi_px - (values - vmin) / span * (hi_px - lo_px)


def render_segment_svg(
    samples: np.ndarray,
    recon: np.ndarray,
    trace: CorrelationTrace,
    regions: list[AnomalyRegion],
    threshold: float,
    start_s: float,
    rate_hz: float,
    title: str = "",
) -> str:
    n = samples.size
    duration = n / rate_hz
    xs = _PAD + np.arange(n) / rate_hz / duration * (_W - 2 * _PAD)

    def x_of(t: float) -> float:
        return _PAD + (t - start_s) / duration * (_W - 2 * _PAD)

    sig_top, sig_bot = _PAD, _PAD + _SIGNAL_H
    both = np.concatenate([samples, recon])
    lo, hi = float(both.min()), float(both.max())
    span = hi - lo if hi > lo else 1.0
    y_sig = sig_bot - (samples - lo) / span * _SIGNAL_H
    y_rec = sig_bot - (recon - lo) / span * _SIGNAL_H

    tr_top = sig_bot + 20
    tr_bot = tr_top + _TRACE_H
    y_r = tr_bot - (np.clip(trace.r, -1, 1) + 1) / 2 * _TRACE_H
    x_r = np.array([x_of(start_s + s + trace.window_len_s / 2) for s in trace.starts])
    y_thr = tr_bot - (threshold + 1) / 2 * _TRACE_H

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
    ]
    for reg in regions:
        x0, x1 = x_of(reg.start_s), x_of(reg.end_s)
        parts.append(
            f'<rect x="{x0:.2f}" y="{sig_top}" width="{x1 - x0:.2f}" '
            f'height="{tr_bot - sig_top}" fill="#f4c7c3" fill-opacity="0.6"/>'
        )
    parts.append(_polyline(xs, y_sig, "#1f77b4"))
    parts.append(_polyline(xs, y_rec, "#ff7f0e"))
    parts.append(_polyline(x_r, y_r, "#2ca02c"))
    parts.append(
        f'<line x1="{_PAD}" y1="{y_thr:.2f}" x2="{_W - _PAD}" y2="{y_thr:.2f}" '
        f'stroke="#d62728" stroke-dasharray="4 3" stroke-width="1"/>'
    )
    if title:
        parts.append(f'<text x="{_PAD}" y="20" font-size="13" font-family="monospace">{title}</text>')
    parts.append(
        f'<text x="{_PAD}" y="{tr_top - 5}" font-size="11" font-family="monospace">'
        "windowed Pearson r (green), threshold (dashed)</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts)


def write_segment_svg(path: str | Path, **kwargs) -> Path:
    path = Path(path)
    path.write_text(render_segment_svg(**kwargs) + "\n", encoding="utf-8")
    return path
