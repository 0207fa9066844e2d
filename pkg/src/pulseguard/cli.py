"""Command-line pipeline: synth, build-corpus, train, detect, eval, report.

Every command is deterministic given (config, seed): reruns produce
byte-identical primary outputs, and the config hash rides along in every
manifest for provenance. Exit codes: 0 success, 2 configuration error,
3 I/O error, 4 data/format error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_IO,
    EXIT_OK,
    ConfigError,
    PipelineConfig,
    load_pipeline_config,
)
from .detector import DetectionResult, DetectorError, correlation_trace
from .dsp import DspError, normalize, preprocess, segmentize
from .evalharness import (
    ConfusionMatrix,
    EvalError,
    PopulationStats,
    confusion_sweep,
    detection_fraction,
    minute_align,
    population_stats,
    render_confusion_text,
    render_population_text,
    render_prevalence_text,
)
from .nnet import (
    ModelIOError,
    NnetError,
    TrainingError,
    load_model,
    reconstruct_batch,
    save_model,
    train,
)
from .pipeline import detect_record, synthesize_plan
from .screen import ScreenError, build_training_corpus, load_corpus, save_corpus
from .svgplot import write_segment_svg
from .synthppg import SynthError, load_record, save_record

_DATA_ERRORS = (
    SynthError, ScreenError, DspError, DetectorError, EvalError,
    NnetError, TrainingError, ModelIOError, json.JSONDecodeError,
)


class CliDataError(RuntimeError):
    """Data-level failure surfaced with exit code 4."""


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_config(args) -> PipelineConfig:
    cfg = load_pipeline_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = PipelineConfig(
            seed=args.seed, synth=cfg.synth, dsp=cfg.dsp, screen=cfg.screen,
            train=cfg.train, detector=cfg.detector, eval=cfg.eval,
        )
        cfg.validate()
    return cfg


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config_hash": cfg.hash(), "seed": cfg.seed, "populations": []}
    gs_all: list[tuple[str, int, int]] = []
    for label, record in synthesize_plan(cfg):
        save_record(record, out / label / record.record_id)
        entry = next((p for p in manifest["populations"] if p["label"] == label), None)
        if entry is None:
            entry = {"label": label, "records": []}
            manifest["populations"].append(entry)
        entry["records"].append(
            {
                "record_id": record.record_id,
                "seed": record.config.seed,
                "duration_s": record.config.duration_s,
                "n_pvc_beats": record.schedule.count("pvc"),
                "n_anomaly_intervals": len(record.anomaly_intervals),
            }
        )
        for minute, count in record.gs_minutes:
            gs_all.append((record.record_id, minute, count))
    for entry in manifest["populations"]:
        label = entry["label"]
        rows = [g for g in gs_all if g[0].startswith(f"{label}-")]
        _write_gs_csv(out / label / "gs.csv", rows)
    _write_gs_csv(out / "gs.csv", gs_all)
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {sum(len(p['records']) for p in manifest['populations'])} records to {out}")
    return EXIT_OK


def _write_gs_csv(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("record_id,minute_index,pvc_count\n")
        for record_id, minute, count in rows:
            fh.write(f"{record_id},{minute},{count}\n")


def _record_dirs(records_root: Path, label: str | None = None) -> list[Path]:
    if not records_root.is_dir():
        raise FileNotFoundError(f"records directory not found: {records_root}")
    roots = [records_root / label] if label else sorted(
        p for p in records_root.iterdir() if p.is_dir()
    )
    dirs = []
    for root in roots:
        if (root / "record.json").exists():
            dirs.append(root)
            continue
        dirs.extend(sorted(p for p in root.iterdir() if (p / "record.json").exists()))
    if not dirs:
        raise CliDataError(f"no records found under {records_root}")
    return dirs


def cmd_build_corpus(args) -> int:
    cfg = _load_config(args)
    records = [load_record(p) for p in _record_dirs(Path(args.records), args.label)]
    corpus = build_training_corpus(
        records,
        thresholds=cfg.screen.thresholds,
        dsp_cfg=cfg.dsp,
        min_clean=cfg.screen.min_clean,
        val_fraction=cfg.screen.val_fraction,
        seed=cfg.seed,
    )
    out = Path(args.out)
    save_corpus(corpus, out)
    extra = {"config_hash": cfg.hash()}
    man_path = out / "manifest.json"
    man = json.loads(man_path.read_text(encoding="utf-8"))
    man.update(extra)
    _write_json(man_path, man)
    print(
        f"corpus: {corpus.manifest.n_train} train / {corpus.manifest.n_val} val segments "
        f"from {corpus.manifest.n_segments} candidates"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    corpus = load_corpus(args.corpus, rate_hz=cfg.dsp.pipeline_rate_hz)
    model, history = train(corpus, cfg.train)
    save_model(model, args.out)
    history_path = Path(args.history) if args.history else Path(args.out).with_suffix(".history.csv")
    with open(history_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for row in history:
            fh.write(f"{row.epoch},{row.train_loss!r},{row.val_loss!r}\n")
    best = min(history, key=lambda r: r.val_loss)
    print(f"trained {len(history)} epochs; best val loss {best.val_loss:.6f} at epoch {best.epoch}")
    return EXIT_OK


def _region_lines(result: DetectionResult) -> str:
    lines = []
    for reg in result.regions:
        lines.append(
            json.dumps(
                {
                    "record_id": result.record_id,
                    "start_s": round(reg.start_s, 6),
                    "end_s": round(reg.end_s, 6),
                    "min_r": round(reg.min_r, 9),
                }
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def cmd_detect(args) -> int:
    cfg = _load_config(args)
    det_cfg = cfg.detector
    if args.threshold is not None:
        det_cfg = type(det_cfg)(
            window_len_s=det_cfg.window_len_s, stride_s=det_cfg.stride_s,
            threshold=args.threshold,
        )
        det_cfg.validate()
    model = load_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config_hash": cfg.hash(), "threshold": det_cfg.threshold, "records": []}
    for rec_dir in _record_dirs(Path(args.records), args.label):
        record = load_record(rec_dir)
        result = detect_record(model, record, det_cfg, cfg.dsp)
        (out / f"{record.record_id}.regions.jsonl").write_text(
            _region_lines(result), encoding="utf-8"
        )
        _write_json(
            out / f"{record.record_id}.coverage.json",
            {
                "record_id": record.record_id,
                "covered": [[round(s, 6), round(e, 6)] for s, e in result.covered],
                "segments_total": result.segments_total,
                "segments_flagged": result.segments_flagged,
                "no_coverage": result.no_coverage,
                "config_hash": cfg.hash(),
            },
        )
        manifest["records"].append(
            {
                "record_id": record.record_id,
                "n_regions": len(result.regions),
                "no_coverage": result.no_coverage,
            }
        )
        if args.plot:
            _plot_record(model, record, det_cfg, cfg, result, out / "plots" / record.record_id)
    _write_json(out / "manifest.json", manifest)
    print(f"detected over {len(manifest['records'])} records into {out}")
    return EXIT_OK


def _plot_record(model, record, det_cfg, cfg, result, plot_dir: Path) -> None:
    plot_dir.mkdir(parents=True, exist_ok=True)
    prepared = preprocess(record.waveform, cfg.dsp)
    segs = [normalize(s) for s in segmentize(
        prepared, cfg.dsp.segment_len_s, cfg.dsp.segment_stride_s, record.record_id)]
    if not segs:
        return
    X = np.stack([s.samples for s in segs])
    recon = reconstruct_batch(model, X)
    for seg, rec in zip(segs, recon):
        trace = correlation_trace(
            seg.samples, rec, det_cfg.window_len_s, det_cfg.stride_s, seg.sample_rate_hz
        )
        seg_end = seg.start_s + seg.duration_s
        regions = [r for r in result.regions if r.start_s < seg_end and r.end_s > seg.start_s]
        write_segment_svg(
            plot_dir / f"seg_{seg.start_s:08.2f}.svg",
            samples=seg.samples,
            recon=rec,
            trace=trace,
            regions=regions,
            threshold=det_cfg.threshold,
            start_s=seg.start_s,
            rate_hz=seg.sample_rate_hz,
            title=f"{record.record_id} t={seg.start_s:.0f}s",
        )


def _read_gs_csv(path: Path) -> dict[str, list[tuple[int, int]]]:
    gs: dict[str, list[tuple[int, int]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["record_id", "minute_index", "pvc_count"]:
            raise CliDataError(f"unexpected gold-standard header {header!r} in {path}")
        for row in reader:
            gs.setdefault(row[0], []).append((int(row[1]), int(row[2])))
    if not gs:
        raise CliDataError(f"gold-standard file {path} holds no rows")
    return gs


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    eval_cfg = cfg.eval
    if args.min_pvc:
        eval_cfg = type(eval_cfg)(
            min_coverage_s=eval_cfg.min_coverage_s,
            min_anomaly_s=eval_cfg.min_anomaly_s,
            min_pvc_values=tuple(args.min_pvc),
        )
        eval_cfg.validate()
    det_dir = Path(args.detections)
    gs = _read_gs_csv(Path(args.gs))
    observations = []
    fractions = []
    for record_id, gs_minutes in sorted(gs.items()):
        cov_path = det_dir / f"{record_id}.coverage.json"
        reg_path = det_dir / f"{record_id}.regions.jsonl"
        if not cov_path.exists():
            continue  # gold standard rows without aligned signal are skipped
        cov = json.loads(cov_path.read_text(encoding="utf-8"))
        regions = []
        if reg_path.exists():
            for line in reg_path.read_text(encoding="utf-8").splitlines():
                row = json.loads(line)
                regions.append((row["start_s"], row["end_s"]))
        observations.extend(
            minute_align(
                regions,
                [tuple(iv) for iv in cov["covered"]],
                gs_minutes,
                record_id=record_id,
                min_coverage_s=eval_cfg.min_coverage_s,
                min_anomaly_s=eval_cfg.min_anomaly_s,
            )
        )
        if cov["segments_total"] > 0:
            fractions.append(detection_fraction(cov["segments_flagged"], cov["segments_total"]))
    if not observations:
        raise CliDataError("no eligible minutes: nothing to evaluate")
    report = confusion_sweep(observations, eval_cfg.min_pvc_values)
    stats = population_stats(fractions, label=args.label or "all")
    report["population_stats"] = {
        stats.label: {
            "n_records": stats.n_records,
            "avg_fraction": stats.avg_fraction,
            "sd_fraction": stats.sd_fraction,
            "max_fraction": stats.max_fraction,
        }
    }
    report["config_hash"] = cfg.hash()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report)
    text = [render_prevalence_text(report["prevalence"]), ""]
    for v in eval_cfg.min_pvc_values:
        cm = report["per_min_pvc"][str(v)]
        text.append(render_confusion_text(ConfusionMatrix(**cm["counts"]), v))
        text.append("")
    text.append(render_population_text([stats]))
    (out / "report.txt").write_text("\n".join(text) + "\n", encoding="utf-8")
    print(f"evaluated {len(observations)} minutes; report in {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    inputs = [Path(p) for p in args.inputs]
    docs = []
    for p in inputs:
        path = p / "report.json" if p.is_dir() else p
        docs.append((str(path), json.loads(Path(path).read_text(encoding="utf-8"))))
    if not docs:
        raise CliDataError("no evaluation reports supplied")
    hashes = {doc.get("config_hash") for _, doc in docs}
    if len(hashes) > 1:
        print(f"warning: inputs carry {len(hashes)} different config hashes", file=sys.stderr)
    combined = {"inputs": [name for name, _ in docs], "reports": [doc for _, doc in docs]}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "combined.json", combined)
    text = []
    stats = []
    for name, doc in docs:
        text.append(f"== {name}")
        text.append(render_prevalence_text(doc["prevalence"]))
        for v, cm in doc["per_min_pvc"].items():
            text.append(render_confusion_text(ConfusionMatrix(**cm["counts"]), int(v)))
        for label, row in doc.get("population_stats", {}).items():
            stats.append(
                PopulationStats(
                    label=label,
                    n_records=row["n_records"],
                    avg_fraction=row["avg_fraction"],
                    sd_fraction=row["sd_fraction"],
                    max_fraction=row["max_fraction"],
                )
            )
        text.append("")
    if stats:
        text.append(render_population_text(stats))
    (out / "combined.txt").write_text("\n".join(text) + "\n", encoding="utf-8")
    print(f"combined {len(docs)} reports into {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulseguard",
        description="PPG cardiac-anomaly detection pipeline on synthetic data",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate labeled synthetic records")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("build-corpus", help="screen records into a training corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label", default=None, help="restrict to one population label")
    p.set_defaults(fn=cmd_build_corpus)

    p = sub.add_parser("train", help="train the autoencoder on a corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--history", default=None, help="loss-history CSV path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("detect", help="flag anomalous regions in records")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label", default=None)
    p.add_argument("--threshold", type=float, default=None, help="override correlation threshold")
    p.add_argument("--plot", action="store_true", help="write per-segment overlay SVGs")
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("eval", help="compare detections against gold-standard PVC counts")
    p.add_argument("--config", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--gs", required=True, help="gold-standard CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--label", default=None, help="population label for the stats block")
    p.add_argument("--min-pvc", type=int, action="append", default=None,
                   help="repeatable; overrides eval.min_pvc_values")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="merge evaluation reports")
    p.add_argument("--out", required=True)
    p.add_argument("inputs", nargs="+", help="report.json files or eval output dirs")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, PermissionError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CliDataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
