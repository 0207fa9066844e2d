"""Aligns detected anomaly regions with per-minute gold-standard PVC counts and
derives confusion matrices and per-population statistics.

A minute enters the evaluation only when enough usable signal covers it; a
covered minute is flagged when the anomalous duration inside it reaches the
minimum (one full detector window by default). Region durations are split
across minute boundaries, so total anomalous time is conserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MIN_COVERAGE_S = 30.0
MIN_ANOMALY_S = 0.5


class EvalError(ValueError):
    """Bad inputs to the evaluation harness."""


@dataclass(frozen=True)
class EvalConfig:
    min_coverage_s: float = MIN_COVERAGE_S
    min_anomaly_s: float = MIN_ANOMALY_S
    min_pvc_values: tuple[int, ...] = (1, 2)

    def validate(self) -> None:
        if not 0 <= self.min_coverage_s <= 60:
            raise EvalError("min_coverage_s must lie in [0, 60]")
        if self.min_anomaly_s < 0:
            raise EvalError("min_anomaly_s must be non-negative")
        if any(v < 1 for v in self.min_pvc_values):
            raise EvalError("min_pvc values must be >= 1")


@dataclass(frozen=True)
class MinuteObservation:
    record_id: str
    minute_index: int
    pvc_count: int
    covered_s: float
    anomalous_s: float
    anomaly_flag: bool


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def tpr(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else math.nan

    @property
    def fnr(self) -> float:
        return self.fn / (self.tp + self.fn) if self.tp + self.fn else math.nan

    @property
    def fpr(self) -> float:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else math.nan

    @property
    def tnr(self) -> float:
        return self.tn / (self.fp + self.tn) if self.fp + self.tn else math.nan

    def rates(self) -> dict[str, float]:
        return {"tpr": self.tpr, "fpr": self.fpr, "tnr": self.tnr, "fnr": self.fnr}

    def counts(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class PopulationStats:
    label: str
    n_records: int
    avg_fraction: float
    sd_fraction: float
    max_fraction: float


def _overlap(a_start: float, a_end: float, b_start: float, b_end: float) -> float:
    return max(0.0, min(a_end, b_end) - max(a_start, b_start))


def minute_align(
    regions,
    covered: list[tuple[float, float]],
    gs_minutes: list[tuple[int, int]],
    record_id: str = "",
    min_coverage_s: float = MIN_COVERAGE_S,
    min_anomaly_s: float = MIN_ANOMALY_S,
) -> list[MinuteObservation]:
    """One observation per gold-standard minute with enough covered signal.

    `regions` may be AnomalyRegion objects or (start_s, end_s) pairs; anomalous
    duration inside a minute counts only where the signal is covered.
    """
    spans = [(r.start_s, r.end_s) if hasattr(r, "start_s") else (r[0], r[1]) for r in regions]
    out = []
    for minute_index, pvc_count in gs_minutes:
        m_start = 60.0 * minute_index
        m_end = m_start + 60.0
        covered_s = sum(_overlap(s, e, m_start, m_end) for s, e in covered)
        if covered_s < min_coverage_s:
            continue
        anomalous_s = 0.0
        for r_start, r_end in spans:
            seg_start = max(r_start, m_start)
            seg_end = min(r_end, m_end)
            if seg_end <= seg_start:
                continue
            anomalous_s += sum(_overlap(s, e, seg_start, seg_end) for s, e in covered)
        out.append(
            MinuteObservation(
                record_id=record_id,
                minute_index=minute_index,
                pvc_count=pvc_count,
                covered_s=covered_s,
                anomalous_s=anomalous_s,
                anomaly_flag=anomalous_s >= min_anomaly_s - 1e-12,
            )
        )
    return out


def confusion(observations: list[MinuteObservation], min_pvc: int = 1) -> ConfusionMatrix:
    """Set-based minute-level confusion matrix; a minute is gold-standard
    positive when its PVC count reaches min_pvc."""
    if min_pvc < 1:
        raise EvalError(f"min_pvc must be >= 1, got {min_pvc}")
    if not observations:
        raise EvalError("no eligible observations")
    tp = fp = fn = tn = 0
    for obs in observations:
        positive = obs.pvc_count >= min_pvc
        if positive and obs.anomaly_flag:
            tp += 1
        elif positive:
            fn += 1
        elif obs.anomaly_flag:
            fp += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


def prevalence(observations: list[MinuteObservation],
               min_pvc_values: tuple[int, ...] = (1, 2)) -> dict:
    total = len(observations)
    zero = sum(1 for o in observations if o.pvc_count == 0)
    report = {
        "total_minutes": total,
        "zero_pvc": {"count": zero, "pct": 100.0 * zero / total if total else math.nan},
        "at_least": {},
    }
    for v in min_pvc_values:
        n = sum(1 for o in observations if o.pvc_count >= v)
        report["at_least"][str(v)] = {
            "count": n,
            "pct": 100.0 * n / total if total else math.nan,
        }
    return report


def confusion_sweep(
    observations: list[MinuteObservation], min_pvc_values: tuple[int, ...] = (1, 2)
) -> dict:
    """One confusion matrix per min_pvc value plus gold-standard prevalence."""
    if any(v < 1 for v in min_pvc_values):
        raise EvalError("min_pvc values must be >= 1")
    if not observations:
        raise EvalError("no eligible observations")
    report = {"prevalence": prevalence(observations, min_pvc_values), "per_min_pvc": {}}
    for v in min_pvc_values:
        cm = confusion(observations, v)
        report["per_min_pvc"][str(v)] = {"counts": cm.counts(), "rates": cm.rates()}
    return report


def population_stats(record_fractions: list[float], label: str = "") -> PopulationStats:
    """Aggregate per-record anomaly fractions (flagged / usable segments):
    average, population standard deviation, and maximum."""
    if not record_fractions:
        raise EvalError(f"population {label!r} has no records")
    arr = np.asarray(record_fractions, dtype=np.float64)
    if np.any((arr < 0) | (arr > 1)):
        raise EvalError("anomaly fractions must lie in [0, 1]")
    return PopulationStats(
        label=label,
        n_records=arr.size,
        avg_fraction=float(arr.mean()),
        sd_fraction=float(arr.std()),
        max_fraction=float(arr.max()),
    )


def detection_fraction(segments_flagged: int, segments_total: int) -> float:
    if segments_total < 1:
        raise EvalError("record has no usable segments")
    return segments_flagged / segments_total


# ---------------------------------------------------------------------------
# Plain-text rendering, laid out like the tables in the reports.
# ---------------------------------------------------------------------------

def _pct(x: float, digits: int = 1) -> str:
    return f"{100.0 * x:.{digits}f}%" if math.isfinite(x) else "n/a"


def render_confusion_text(cm: ConfusionMatrix, min_pvc: int) -> str:
    lines = [
        f"Minute-level detection vs gold standard (positive = >= {min_pvc} PVC/min)",
        f"{'':>16} | {'anomaly flagged':>24} | {'not flagged':>24}",
        f"{'PVC in GS':>16} | {cm.tp:>7} ({_pct(cm.tpr)} true positive) | "
        f"{cm.fn:>6} ({_pct(cm.fnr)} false negative)",
        f"{'no PVC in GS':>16} | {cm.fp:>7} ({_pct(cm.fpr)} false positive) | "
        f"{cm.tn:>6} ({_pct(cm.tnr)} true negative)",
    ]
    return "\n".join(lines)


def render_prevalence_text(prev: dict) -> str:
    total = prev["total_minutes"]
    parts = [f"{total} eligible minutes"]
    z = prev["zero_pvc"]
    parts.append(f"{z['count']} ({z['pct']:.1f}%) are 0 PVCs/min")
    for v, row in prev["at_least"].items():
        parts.append(f"{row['count']} ({row['pct']:.1f}%) are >= {v} PVCs/min")
    return "; ".join(parts)


def render_population_text(stats: list[PopulationStats]) -> str:
    """Per-population share of segments with anomalies: avg (+/- sd) and max."""
    header = f"{'Population':>12} | {'Avg (Stdev)':>18} | {'Max':>7}"
    rows = [header, "-" * len(header)]
    for s in stats:
        avg = f"{100.0 * s.avg_fraction:.2f}%"
        sd = f"(±{100.0 * s.sd_fraction:.1f}%)"
        rows.append(f"{s.label:>12} | {avg + ' ' + sd:>18} | {100.0 * s.max_fraction:>6.1f}%")
    return "\n".join(rows)
