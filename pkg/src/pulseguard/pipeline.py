"""Glue between modules: record synthesis plans, preprocessing, per-record
detection, and evaluation assembly. Per-record work runs on a small thread pool
capped by the PULSEGUARD_THREADS environment variable; results are merged in
input order so the worker count never changes any output.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .config import PipelineConfig, record_synth_config
from .detector import DetectionResult, DetectorConfig, detect
from .dsp import DspChainConfig, Waveform, preprocess
from .evalharness import EvalConfig, MinuteObservation, minute_align
from .nnet import ModelParams
from .synthppg import LabeledRecord, synthesize_record

THREADS_ENV = "PULSEGUARD_THREADS"


def worker_count() -> int:
    env = os.environ.get(THREADS_ENV)
    if env is not None:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}")
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def pmap(fn, items):
    """Ordered map over items, threaded when more than one worker is allowed."""
    items = list(items)
    workers = min(worker_count(), len(items)) if items else 1
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def plan_records(cfg: PipelineConfig) -> list[tuple[str, str, object]]:
    """(label, record_id, synth config) for every record in the plan."""
    out = []
    for pop_index, pop in enumerate(cfg.synth.populations):
        for record_index in range(pop.n_records):
            record_id = f"{pop.label}-{record_index:04d}"
            rc = record_synth_config(cfg.synth, pop, cfg.seed, pop_index, record_index)
            out.append((pop.label, record_id, rc))
    return out


def synthesize_plan(cfg: PipelineConfig) -> list[tuple[str, LabeledRecord]]:
    """All records of the plan, generated in parallel, in plan order."""
    plan = plan_records(cfg)
    records = pmap(lambda item: synthesize_record(item[2], item[1]), plan)
    return [(label, rec) for (label, _, _), rec in zip(plan, records)]


def preprocess_record(record: LabeledRecord, dsp_cfg: DspChainConfig) -> Waveform:
    return preprocess(record.waveform, dsp_cfg)


def detect_record(
    model: ModelParams,
    record: LabeledRecord,
    det_cfg: DetectorConfig,
    dsp_cfg: DspChainConfig,
) -> DetectionResult:
    prepared = preprocess_record(record, dsp_cfg)
    return detect(model, prepared, det_cfg, dsp_cfg, record_id=record.record_id)


def detect_records(
    model: ModelParams,
    records: list[LabeledRecord],
    det_cfg: DetectorConfig,
    dsp_cfg: DspChainConfig,
) -> list[DetectionResult]:
    return pmap(lambda rec: detect_record(model, rec, det_cfg, dsp_cfg), records)


def observations_for_record(
    result: DetectionResult,
    gs_minutes: list[tuple[int, int]],
    eval_cfg: EvalConfig,
) -> list[MinuteObservation]:
    return minute_align(
        result.regions,
        result.covered,
        gs_minutes,
        record_id=result.record_id,
        min_coverage_s=eval_cfg.min_coverage_s,
        min_anomaly_s=eval_cfg.min_anomaly_s,
    )
