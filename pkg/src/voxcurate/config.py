"""Pipeline configuration: YAML schema with strict key validation.

Unknown keys fail fast with their dotted path, before any stage work
starts, so typos cannot silently disable options.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .audio import LoudnessSpec
from .filtering import FilterPolicy
from .segmentation import SegmenterConfig


class ConfigError(ValueError):
    """Configuration failed validation."""


def _section(raw: Mapping[str, Any], name: str, allowed: dict[str, Any],
             path: str = "") -> dict[str, Any]:
    """Pop a mapping section and check it only contains allowed keys;
    returns allowed defaults overlaid with the section's values."""
    value = raw.get(name, {})
    if value is None:
        value = {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"config section {path}{name} must be a mapping")
    unknown = set(value) - set(allowed)
    if unknown:
        raise ConfigError(
            f"unknown config key(s) {sorted(unknown)} under {path}{name}"
        )
    merged = dict(allowed)
    merged.update(value)
    return merged


@dataclass(frozen=True)
class AdapterConfig:
    mode: str = "stub"  # "stub" | "http"
    base_url: str | None = None
    timeout_s: float = 30.0
    transcribe_mode: str = "empty"
    dnsmos_mode: str = "fixed"
    dnsmos_value: float = 3.0
    vad_mode: str = "full"

    def __post_init__(self) -> None:
        if self.mode not in ("stub", "http"):
            raise ConfigError("adapter.mode must be 'stub' or 'http'")


@dataclass(frozen=True)
class PathsConfig:
    work_dir: Path = Path("run")
    audio_dir: Path | None = None
    datasets_dir: Path | None = None
    generations_dir: Path | None = None
    subjective_file: Path | None = None


@dataclass(frozen=True)
class BenchmarkOptions:
    prompts_per_dataset: int = 500
    use_default_categories: bool = True


@dataclass(frozen=True)
class EvaluateOptions:
    model_name: str = "model"


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    shard_count: int = 1
    worker_count: int = 1
    retries: int = 2
    min_chars_per_s: float = 2.0
    paths: PathsConfig = field(default_factory=PathsConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    loudness: LoudnessSpec = field(default_factory=LoudnessSpec)
    filter_policy: FilterPolicy = field(default_factory=FilterPolicy)
    benchmark: BenchmarkOptions = field(default_factory=BenchmarkOptions)
    evaluate: EvaluateOptions = field(default_factory=EvaluateOptions)

    def __post_init__(self) -> None:
        if self.shard_count < 1:
            raise ConfigError("shard_count must be >= 1")
        if self.worker_count < 1:
            raise ConfigError("worker_count must be >= 1")
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")


_TOP_LEVEL = (
    "seed",
    "shard_count",
    "worker_count",
    "retries",
    "min_chars_per_s",
    "paths",
    "adapter",
    "segmenter",
    "loudness",
    "filter",
    "benchmark",
    "evaluate",
)


def config_from_dict(raw: Mapping[str, Any]) -> PipelineConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - set(_TOP_LEVEL)
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)}")

    paths_raw = _section(
        raw,
        "paths",
        {
            "work_dir": "run",
            "audio_dir": None,
            "datasets_dir": None,
            "generations_dir": None,
            "subjective_file": None,
        },
    )
    paths = PathsConfig(
        work_dir=Path(paths_raw["work_dir"]),
        audio_dir=(
            Path(paths_raw["audio_dir"]) if paths_raw["audio_dir"] else None
        ),
        datasets_dir=(
            Path(paths_raw["datasets_dir"])
            if paths_raw["datasets_dir"]
            else None
        ),
        generations_dir=(
            Path(paths_raw["generations_dir"])
            if paths_raw["generations_dir"]
            else None
        ),
        subjective_file=(
            Path(paths_raw["subjective_file"])
            if paths_raw["subjective_file"]
            else None
        ),
    )

    adapter_raw = _section(
        raw,
        "adapter",
        {
            "mode": "stub",
            "base_url": None,
            "timeout_s": 30.0,
            "transcribe_mode": "empty",
            "dnsmos_mode": "fixed",
            "dnsmos_value": 3.0,
            "vad_mode": "full",
        },
    )
    adapter = AdapterConfig(
        mode=str(adapter_raw["mode"]),
        base_url=adapter_raw["base_url"],
        timeout_s=float(adapter_raw["timeout_s"]),
        transcribe_mode=str(adapter_raw["transcribe_mode"]),
        dnsmos_mode=str(adapter_raw["dnsmos_mode"]),
        dnsmos_value=float(adapter_raw["dnsmos_value"]),
        vad_mode=str(adapter_raw["vad_mode"]),
    )

    segmenter_raw = _section(
        raw,
        "segmenter",
        {
            "min_segment_s": 3.0,
            "max_segment_s": 30.0,
            "merge_gap_s": 0.5,
            "frame_ms": 25.0,
            "hop_ms": 10.0,
            "hangover_ms": 200.0,
            "min_region_ms": 250.0,
            "energy_margin_db": 6.0,
            "abs_floor_dbfs": -45.0,
        },
    )
    segmenter = SegmenterConfig(
        **{key: float(value) for key, value in segmenter_raw.items()}
    )

    loudness_raw = _section(
        raw,
        "loudness",
        {"target_rms_dbfs": -20.0, "peak_ceiling_dbfs": -1.0},
    )
    loudness = LoudnessSpec(
        target_rms_dbfs=float(loudness_raw["target_rms_dbfs"]),
        peak_ceiling_dbfs=float(loudness_raw["peak_ceiling_dbfs"]),
    )

    filter_raw = _section(
        raw,
        "filter",
        {
            "mode": "combined",
            "removal_percentile": 15.0,
            "absolute_overrides": None,
        },
    )
    overrides = filter_raw["absolute_overrides"]
    if overrides is not None:
        if not isinstance(overrides, Mapping):
            raise ConfigError("filter.absolute_overrides must be a mapping")
        overrides = {str(k): float(v) for k, v in overrides.items()}
    try:
        filter_policy = FilterPolicy(
            mode=str(filter_raw["mode"]),
            removal_percentile=float(filter_raw["removal_percentile"]),
            absolute_overrides=overrides,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    benchmark_raw = _section(
        raw,
        "benchmark",
        {"prompts_per_dataset": 500, "use_default_categories": True},
    )
    benchmark = BenchmarkOptions(
        prompts_per_dataset=int(benchmark_raw["prompts_per_dataset"]),
        use_default_categories=bool(benchmark_raw["use_default_categories"]),
    )

    evaluate_raw = _section(raw, "evaluate", {"model_name": "model"})
    evaluate = EvaluateOptions(model_name=str(evaluate_raw["model_name"]))

    try:
        return PipelineConfig(
            seed=int(raw.get("seed", 0)),
            shard_count=int(raw.get("shard_count", 1)),
            worker_count=int(raw.get("worker_count", 1)),
            retries=int(raw.get("retries", 2)),
            min_chars_per_s=float(raw.get("min_chars_per_s", 2.0)),
            paths=paths,
            adapter=adapter,
            segmenter=segmenter,
            loudness=loudness,
            filter_policy=filter_policy,
            benchmark=benchmark,
            evaluate=evaluate,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> PipelineConfig:
    with Path(path).open("r", encoding="utf-8") as handle:
        try:
            raw = yaml.safe_load(handle) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(raw)
