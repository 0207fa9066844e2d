"""Single JSON pipeline configuration shared by all CLI commands.

Every command revalidates the config against the owning module's preconditions
at load time, and the canonical config hash is embedded in every output file
for provenance. Scalar fields may be given as [low, high] ranges where noted;
ranges are sampled once per record from the record's own seeded generator.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .detector import DetectorConfig, DetectorError
from .dsp import DspChainConfig, DspError
from .evalharness import EvalConfig, EvalError
from .nnet import NnetError, TrainConfig
from .screen import ScreenError, ScreenThresholds
from .synthppg import SynthConfig, SynthError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4


class ConfigError(ValueError):
    """Invalid pipeline configuration; the message names the offending field."""


Range = float | tuple[float, float]


def _as_range(value, field_name: str) -> tuple[float, float]:
    if isinstance(value, (int, float)):
        return float(value), float(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        lo, hi = float(value[0]), float(value[1])
        if hi < lo:
            raise ConfigError(f"{field_name}: range high {hi} below low {lo}")
        return lo, hi
    raise ConfigError(f"{field_name}: expected a number or [low, high], got {value!r}")


def _sample(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return lo if lo == hi else float(rng.uniform(lo, hi))


@dataclass(frozen=True)
class PopulationSpec:
    """One synthetic population: record count plus per-record parameter ranges."""

    label: str
    n_records: int
    duration_s: float = 300.0
    base_hr_bpm: Range = (55.0, 95.0)
    hrv_sigma: Range = 0.03
    resp_rate_hz: Range = (0.18, 0.30)
    resp_mod_depth: Range = 0.08
    noise_sigma: Range = 0.01
    pvc_rate_per_min: Range = 0.0
    af_episode_rate_per_hour: Range = 0.0
    af_episode_len_s: float = 30.0

    def validate(self, where: str) -> None:
        if not self.label:
            raise ConfigError(f"{where}.label: must be nonempty")
        if self.n_records < 1:
            raise ConfigError(f"{where}.n_records: must be >= 1, got {self.n_records}")
        if self.duration_s <= 0:
            raise ConfigError(f"{where}.duration_s: must be positive")
        for name in ("base_hr_bpm", "hrv_sigma", "resp_rate_hz", "resp_mod_depth",
                     "noise_sigma", "pvc_rate_per_min", "af_episode_rate_per_hour"):
            _as_range(getattr(self, name), f"{where}.{name}")
        lo, hi = _as_range(self.base_hr_bpm, f"{where}.base_hr_bpm")
        if lo < 35.0 or hi > 180.0:
            raise ConfigError(
                f"{where}.base_hr_bpm: [{lo}, {hi}] outside the supported band [35, 180]"
            )


@dataclass(frozen=True)
class SynthPlan:
    populations: tuple[PopulationSpec, ...]
    native_rate_hz: float = 128.0

    def validate(self) -> None:
        if not self.populations:
            raise ConfigError("synth.populations: at least one population required")
        labels = [p.label for p in self.populations]
        if len(set(labels)) != len(labels):
            raise ConfigError("synth.populations: labels must be unique")
        for idx, pop in enumerate(self.populations):
            pop.validate(f"synth.populations[{idx}]")
        if self.native_rate_hz <= 0:
            raise ConfigError("synth.native_rate_hz: must be positive")


@dataclass(frozen=True)
class ScreenConfig:
    thresholds: ScreenThresholds = ScreenThresholds()
    min_clean: int = 1000
    val_fraction: float = 0.1

    def validate(self) -> None:
        try:
            self.thresholds.validate()
        except ScreenError as exc:
            raise ConfigError(f"screen: {exc}") from exc
        if self.min_clean < 1:
            raise ConfigError("screen.min_clean: must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("screen.val_fraction: must lie in (0, 1)")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    synth: SynthPlan = SynthPlan(populations=(PopulationSpec(label="default", n_records=4),))
    dsp: DspChainConfig = DspChainConfig()
    screen: ScreenConfig = ScreenConfig()
    train: TrainConfig = TrainConfig()
    detector: DetectorConfig = DetectorConfig()
    eval: EvalConfig = EvalConfig()

    def validate(self) -> None:
        self.synth.validate()
        try:
            self.dsp.validate()
        except DspError as exc:
            raise ConfigError(f"dsp: {exc}") from exc
        self.screen.validate()
        try:
            self.train.validate()
        except NnetError as exc:
            raise ConfigError(f"train: {exc}") from exc
        try:
            self.detector.validate()
        except DetectorError as exc:
            raise ConfigError(f"detector: {exc}") from exc
        try:
            self.eval.validate()
        except EvalError as exc:
            raise ConfigError(f"eval: {exc}") from exc

    def to_dict(self) -> dict:
        doc = asdict(self)
        return doc

    def hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _build(cls, raw: dict, where: str, casts: dict | None = None):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object, got {type(raw).__name__}")
    valid = {f.name for f in cls.__dataclass_fields__.values()} if hasattr(cls, "__dataclass_fields__") else set()
    unknown = set(raw) - valid
    if unknown:
        raise ConfigError(f"{where}: unknown fields {sorted(unknown)}")
    kwargs = dict(raw)
    if casts:
        for key, fn in casts.items():
            if key in kwargs:
                kwargs[key] = fn(kwargs[key])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def pipeline_config_from_dict(doc: dict) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(doc) - {"seed", "synth", "dsp", "screen", "train", "detector", "eval"}
    if unknown:
        raise ConfigError(f"config: unknown sections {sorted(unknown)}")
    kwargs: dict = {}
    if "seed" in doc:
        if not isinstance(doc["seed"], int):
            raise ConfigError(f"seed: expected an integer, got {doc['seed']!r}")
        kwargs["seed"] = doc["seed"]
    if "synth" in doc:
        raw = dict(doc["synth"])
        pops_raw = raw.pop("populations", None)
        if pops_raw is None:
            raise ConfigError("synth.populations: required")
        pops = []
        for idx, p in enumerate(pops_raw):
            pops.append(_build(PopulationSpec, _listify(p), f"synth.populations[{idx}]"))
        kwargs["synth"] = _build(
            SynthPlan, {**raw, "populations": tuple(pops)}, "synth"
        )
    if "dsp" in doc:
        kwargs["dsp"] = _build(DspChainConfig, doc["dsp"], "dsp")
    if "screen" in doc:
        raw = dict(doc["screen"])
        thr_raw = raw.pop("thresholds", {})
        if "pulse_band_hz" in thr_raw:
            thr_raw = {**thr_raw, "pulse_band_hz": tuple(thr_raw["pulse_band_hz"])}
        thresholds = _build(ScreenThresholds, thr_raw, "screen.thresholds")
        kwargs["screen"] = _build(ScreenConfig, {**raw, "thresholds": thresholds}, "screen")
    if "train" in doc:
        kwargs["train"] = _build(TrainConfig, doc["train"], "train")
    if "detector" in doc:
        kwargs["detector"] = _build(DetectorConfig, doc["detector"], "detector")
    if "eval" in doc:
        raw = dict(doc["eval"])
        if "min_pvc_values" in raw:
            raw["min_pvc_values"] = tuple(int(v) for v in raw["min_pvc_values"])
        kwargs["eval"] = _build(EvalConfig, raw, "eval")
    cfg = PipelineConfig(**kwargs)
    cfg.validate()
    return cfg


def _listify(raw: dict) -> dict:
    """JSON arrays become tuples so range fields hash and compare stably."""
    out = {}
    for key, value in raw.items():
        out[key] = tuple(value) if isinstance(value, list) else value
    return out


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return pipeline_config_from_dict(doc)


def record_synth_config(plan: SynthPlan, pop: PopulationSpec, global_seed: int,
                        pop_index: int, record_index: int) -> SynthConfig:
    """Concrete per-record generator config; ranges are sampled from a seed
    derived from (global seed, population, record index)."""
    ss = np.random.SeedSequence(entropy=(int(global_seed), int(pop_index), int(record_index)))
    sampler, record_seed = ss.spawn(2)
    rng = np.random.default_rng(sampler)
    cfg = SynthConfig(
        duration_s=pop.duration_s,
        base_hr_bpm=_sample(rng, _as_range(pop.base_hr_bpm, "base_hr_bpm")),
        hrv_sigma=_sample(rng, _as_range(pop.hrv_sigma, "hrv_sigma")),
        resp_rate_hz=_sample(rng, _as_range(pop.resp_rate_hz, "resp_rate_hz")),
        resp_mod_depth=_sample(rng, _as_range(pop.resp_mod_depth, "resp_mod_depth")),
        noise_sigma=_sample(rng, _as_range(pop.noise_sigma, "noise_sigma")),
        pvc_rate_per_min=_sample(rng, _as_range(pop.pvc_rate_per_min, "pvc_rate_per_min")),
        af_episode_rate_per_hour=_sample(
            rng, _as_range(pop.af_episode_rate_per_hour, "af_episode_rate_per_hour")
        ),
        af_episode_len_s=pop.af_episode_len_s,
        native_rate_hz=plan.native_rate_hz,
        seed=int(record_seed.generate_state(1)[0]),
    )
    try:
        cfg.validate()
    except SynthError as exc:
        raise ConfigError(f"synth population {pop.label!r} record {record_index}: {exc}") from exc
    return cfg
