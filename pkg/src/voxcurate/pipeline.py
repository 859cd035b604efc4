"""Pipeline stages over an on-disk run directory.

Each stage reads and writes manifest files under the work directory,
shards its work by stable identifier hash, and leaves done-markers so
interrupted runs resume without repeating finished shards. Timestamps
appear only in the run log; every other artifact is byte-deterministic
for a given (config, seed, inputs).

Audio references in manifests follow one convention: an asset's `uri`
is its standardized WAV path relative to the work directory, and a
segment is addressed by that uri plus its start/end offsets. Prompt
audio handed to embedding adapters uses the prompt segment id as an
opaque reference the scoring service resolves.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from . import benchmark as bench
from . import evaluation as evalmod
from . import mos as mosmod
from .adapters import resolve_scorer
from .audio import (
    length_mismatch_filter,
    read_wav,
    standardize_audio,
    write_wav,
)
from .config import ConfigError, PipelineConfig
from .filtering import apply_filter_policy, retention_report, score_segments
from .manifest import (
    Asset,
    DatasetManifest,
    ManifestError,
    Segment,
    compute_dataset_stats,
    dump_line,
    merge_assets,
    merge_segments,
    parse_line,
    read_manifest,
    stats_by_group,
    write_manifest,
)
from .report import (
    dataset_statistics_report,
    evaluation_table_report,
    retention_table_report,
    score_histograms,
)
from .segmentation import detect_speech_regions, segments_from_regions
from .sharding import (
    StageState,
    content_digest,
    file_digest,
    partition_ids,
    run_sharded,
)
from .text_metrics import UndefinedRateError

STAGES = (
    "ingest",
    "segment",
    "score",
    "filter",
    "stats",
    "build-eval",
    "evaluate",
    "aggregate-mos",
    "report",
)

_AUDIO_EXTENSION = ".wav"


@dataclass(frozen=True)
class RunLayout:
    """Fixed file layout under the work directory."""

    work_dir: Path

    @property
    def state_dir(self) -> Path:
        return self.work_dir / "state"

    @property
    def shards_dir(self) -> Path:
        return self.work_dir / "shards"

    @property
    def audio_dir(self) -> Path:
        return self.work_dir / "audio"

    @property
    def report_dir(self) -> Path:
        return self.work_dir / "report"

    @property
    def log_path(self) -> Path:
        return self.work_dir / "run.log"

    @property
    def assets_path(self) -> Path:
        return self.work_dir / "assets.jsonl"

    @property
    def segments_path(self) -> Path:
        return self.work_dir / "segments.jsonl"

    @property
    def scored_path(self) -> Path:
        return self.work_dir / "scored.jsonl"

    @property
    def filtered_path(self) -> Path:
        return self.work_dir / "filtered.jsonl"

    @property
    def core_path(self) -> Path:
        return self.work_dir / "core.jsonl"

    @property
    def audit_path(self) -> Path:
        return self.work_dir / "filter_audit.jsonl"

    @property
    def stats_path(self) -> Path:
        return self.work_dir / "stats.json"

    @property
    def benchmark_path(self) -> Path:
        return self.work_dir / "benchmark.jsonl"

    @property
    def benchmark_layout_path(self) -> Path:
        return self.work_dir / "benchmark_layout.json"

    @property
    def evaluation_dir(self) -> Path:
        return self.work_dir / "evaluation"

    @property
    def mos_path(self) -> Path:
        return self.work_dir / "mos.json"

    def shard_path(self, stage: str, shard_id: int, suffix: str) -> Path:
        return self.shards_dir / f"{stage}.shard{shard_id:04d}{suffix}"


def run_logger(layout: RunLayout) -> logging.Logger:
    """Logger writing timestamped lines to the run log file only."""
    layout.work_dir.mkdir(parents=True, exist_ok=True)
    logger = logging.getLogger(f"voxcurate.run.{layout.work_dir}")
    logger.setLevel(logging.INFO)
    logger.propagate = False
    wanted = str(layout.log_path)
    have = [
        handler
        for handler in logger.handlers
        if isinstance(handler, logging.FileHandler)
        and handler.baseFilename == wanted
    ]
    if not have:
        handler = logging.FileHandler(layout.log_path, encoding="utf-8")
        handler.setFormatter(
            logging.Formatter("%(asctime)s %(levelname)s %(message)s")
        )
        logger.addHandler(handler)
    return logger


def config_fingerprint(config: PipelineConfig) -> str:
    """Digest of the config fields that can change stage outputs.

    Worker count and retry limit only affect scheduling, never results,
    so changing them must not invalidate completed shards.
    """
    raw = dataclasses.asdict(config)
    raw.pop("worker_count", None)
    raw.pop("retries", None)
    encoded = json.dumps(raw, sort_keys=True, default=str)
    return hashlib.sha256(encoded.encode("utf-8")).hexdigest()


def make_scorer(config: PipelineConfig) -> Any:
    adapter = config.adapter
    if adapter.mode == "stub":
        return resolve_scorer(
            "stub",
            transcribe_mode=adapter.transcribe_mode,
            dnsmos_mode=adapter.dnsmos_mode,
            dnsmos_value=adapter.dnsmos_value,
            vad_mode=adapter.vad_mode,
        )
    return resolve_scorer("http", base_url=adapter.base_url)


def _write_lines(path: Path, rows: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        for row in rows:
            handle.write(dump_line(row) + "\n")


def _read_lines(path: Path) -> list[dict]:
    rows = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if line.strip():
                rows.append(parse_line(line, lineno))
    return rows


# --- ingest -------------------------------------------------------------

_ASSET_SIDE_KEYS = ("source_dataset", "sub_split", "language", "license")


def _discover_inputs(audio_dir: Path) -> list[Path]:
    files = sorted(audio_dir.glob(f"*{_AUDIO_EXTENSION}"))
    if not files:
        raise ConfigError(f"no {_AUDIO_EXTENSION} files under {audio_dir}")
    return files


def _ingest_one(wav_path: Path, config: PipelineConfig,
                layout: RunLayout) -> Asset:
    samples, rate = read_wav(wav_path)
    result = standardize_audio(samples, rate, config.loudness)
    out_path = layout.audio_dir / wav_path.name
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_wav(out_path, result.samples, result.sample_rate_hz)

    extras: dict[str, Any] = {}
    meta: dict[str, Any] = {}
    meta_path = wav_path.with_suffix(".json")
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    text_path = wav_path.with_suffix(".txt")
    if text_path.exists():
        extras["text"] = text_path.read_text(encoding="utf-8").strip()
    for key, value in sorted(meta.items()):
        if key not in _ASSET_SIDE_KEYS:
            extras[key] = value
    if result.silent:
        extras["silent"] = True

    duration = len(result.samples) / result.sample_rate_hz
    return Asset(
        asset_id=wav_path.stem,
        uri=out_path.relative_to(layout.work_dir).as_posix(),
        duration_s=duration,
        sample_rate_hz=result.sample_rate_hz,
        channels=1,
        source_dataset=str(meta.get("source_dataset", "unsorted")),
        sub_split=str(meta.get("sub_split", "")),
        language=str(meta.get("language", "en")),
        license=str(meta.get("license", "")),
        extras=extras,
    )


def stage_ingest(config: PipelineConfig, layout: RunLayout,
                 log: logging.Logger) -> None:
    """Standardize raw recordings into the run's asset store.

    Inputs are WAV files; an optional same-stem .txt sidecar carries a
    transcript and an optional .json sidecar carries source metadata.
    """
    if config.paths.audio_dir is None:
        raise ConfigError("paths.audio_dir is required for ingest")
    inputs = _discover_inputs(config.paths.audio_dir)
    by_stem = {path.stem: path for path in inputs}
    shards = partition_ids(sorted(by_stem), config.shard_count)
    fingerprint = config_fingerprint(config)

    def shard_digest(shard_id: int) -> str:
        parts: list[str] = ["ingest", str(shard_id), fingerprint]
        for stem in shards[shard_id]:
            wav_path = by_stem[stem]
            parts.append(stem)
            parts.append(file_digest(wav_path))
            for sidecar in (wav_path.with_suffix(".txt"),
                            wav_path.with_suffix(".json")):
                if sidecar.exists():
                    parts.append(file_digest(sidecar))
        return content_digest(*parts)

    digests = [shard_digest(i) for i in range(config.shard_count)]

    def worker(shard_id: int) -> None:
        assets = [
            _ingest_one(by_stem[stem], config, layout)
            for stem in shards[shard_id]
        ]
        shard_path = layout.shard_path("ingest", shard_id, ".assets.jsonl")
        _write_lines(
            shard_path,
            [asset.to_record() for asset in
             sorted(assets, key=lambda a: a.asset_id)],
        )

    state = StageState(layout.state_dir, "ingest")
    outcomes = run_sharded(
        "ingest", state, digests, worker,
        worker_count=config.worker_count, retries=config.retries,
    )
    merged = merge_assets(
        _read_asset_shard(layout, "ingest", shard_id)
        for shard_id in range(config.shard_count)
    )
    _write_lines(
        layout.assets_path, [asset.to_record() for asset in merged]
    )
    ran = sum(1 for outcome in outcomes if not outcome.skipped)
    log.info(
        "ingest: %d assets, %d/%d shards computed",
        len(merged), ran, config.shard_count,
    )


def _read_asset_shard(layout: RunLayout, stage: str,
                      shard_id: int) -> list[Asset]:
    path = layout.shard_path(stage, shard_id, ".assets.jsonl")
    if not path.exists():
        return []
    return [Asset.from_record(row) for row in _read_lines(path)]


def _read_segment_shard(layout: RunLayout, stage: str,
                        shard_id: int) -> list[Segment]:
    path = layout.shard_path(stage, shard_id, ".jsonl")
    if not path.exists():
        return []
    return [Segment.from_record(row) for row in _read_lines(path)]


# --- segment ------------------------------------------------------------

def stage_segment(config: PipelineConfig, layout: RunLayout,
                  log: logging.Logger) -> None:
    """Cut standardized assets into speech segments via energy VAD."""
    assets = _load_assets(layout)
    asset_ids = sorted(assets)
    shards = partition_ids(asset_ids, config.shard_count)
    fingerprint = config_fingerprint(config)

    def shard_digest(shard_id: int) -> str:
        parts = ["segment", str(shard_id), fingerprint]
        for asset_id in shards[shard_id]:
            parts.append(dump_line(assets[asset_id].to_record()))
        return content_digest(*parts)

    digests = [shard_digest(i) for i in range(config.shard_count)]

    def worker(shard_id: int) -> None:
        records: list[Segment] = []
        for asset_id in shards[shard_id]:
            asset = assets[asset_id]
            samples, rate = read_wav(layout.work_dir / asset.uri)
            regions = detect_speech_regions(samples, rate, config.segmenter)
            cut = segments_from_regions(regions, config.segmenter, asset_id)
            text = str(asset.extras.get("text", ""))
            if text:
                cut = [
                    dataclasses.replace(segment, text=text)
                    for segment in cut
                ]
                cut, dropped = length_mismatch_filter(
                    cut, config.min_chars_per_s
                )
                if dropped:
                    log.info(
                        "segment: dropped %d length-mismatched segments "
                        "from %s", len(dropped), asset_id,
                    )
            records.extend(cut)
        _write_lines(
            layout.shard_path("segment", shard_id, ".jsonl"),
            [segment.rounded().to_record()
             for segment in sorted(records, key=_segment_key)],
        )

    state = StageState(layout.state_dir, "segment")
    run_sharded(
        "segment", state, digests, worker,
        worker_count=config.worker_count, retries=config.retries,
    )
    merged = merge_segments(
        _read_segment_shard(layout, "segment", shard_id)
        for shard_id in range(config.shard_count)
    )
    manifest = DatasetManifest(name="segments", records=tuple(merged),
                               assets=assets)
    manifest.validate()
    write_manifest(manifest, layout.segments_path)
    log.info("segment: %d segments from %d assets", len(merged), len(assets))


def _segment_key(segment: Segment) -> tuple:
    return (segment.asset_id, segment.start_s, segment.segment_id)


def _require_stage_file(path: Path, predecessor: str) -> None:
    if not path.exists():
        raise ConfigError(f"{path} not found; run {predecessor} first")


def _load_assets(layout: RunLayout) -> dict[str, Asset]:
    _require_stage_file(layout.assets_path, "ingest")
    assets = [
        Asset.from_record(row) for row in _read_lines(layout.assets_path)
    ]
    return {asset.asset_id: asset for asset in assets}


# --- score --------------------------------------------------------------

def stage_score(config: PipelineConfig, layout: RunLayout,
                log: logging.Logger) -> None:
    """Attach quality scores to every segment through the adapter."""
    _require_stage_file(layout.segments_path, "segment")
    manifest = read_manifest(layout.segments_path, name="segments")
    records = list(manifest.records)
    by_id = {segment.segment_id: segment for segment in records}
    shards = partition_ids(sorted(by_id), config.shard_count)
    fingerprint = config_fingerprint(config)
    scorer = make_scorer(config)

    def shard_digest(shard_id: int) -> str:
        parts = ["score", str(shard_id), fingerprint]
        for segment_id in shards[shard_id]:
            parts.append(dump_line(by_id[segment_id].to_record()))
        return content_digest(*parts)

    digests = [shard_digest(i) for i in range(config.shard_count)]

    def worker(shard_id: int) -> None:
        shard_records = [by_id[sid] for sid in shards[shard_id]]
        scored, failures = score_segments(
            shard_records, manifest.assets, scorer
        )
        for failure in failures:
            log.warning("score: %s", dump_line(failure).strip())
        _write_lines(
            layout.shard_path("score", shard_id, ".jsonl"),
            [segment.rounded().to_record()
             for segment in sorted(scored, key=_segment_key)],
        )

    state = StageState(layout.state_dir, "score")
    outcomes = run_sharded(
        "score", state, digests, worker,
        worker_count=config.worker_count, retries=config.retries,
    )
    merged = merge_segments(
        _read_segment_shard(layout, "score", shard_id)
        for shard_id in range(config.shard_count)
    )
    scored_manifest = DatasetManifest(
        name="scored", records=tuple(merged), assets=manifest.assets
    )
    scored_manifest.validate()
    write_manifest(scored_manifest, layout.scored_path)
    ran = sum(1 for outcome in outcomes if not outcome.skipped)
    log.info(
        "score: %d segments, %d/%d shards computed",
        len(merged), ran, config.shard_count,
    )


# --- filter -------------------------------------------------------------

def stage_filter(config: PipelineConfig, layout: RunLayout,
                 log: logging.Logger) -> None:
    """Apply the retention policy; ranking always collects globally."""
    _require_stage_file(layout.scored_path, "score")
    manifest = read_manifest(layout.scored_path, name="scored")
    records = list(manifest.records)
    fingerprint = config_fingerprint(config)
    digest = content_digest(
        "filter", fingerprint,
        *(dump_line(segment.to_record()) for segment in records),
    )

    def worker(shard_id: int) -> None:
        del shard_id
        flagged, audit = apply_filter_policy(records, config.filter_policy)
        flagged_manifest = DatasetManifest(
            name="filtered", records=tuple(flagged), assets=manifest.assets
        )
        write_manifest(flagged_manifest, layout.filtered_path)
        core = [segment for segment in flagged if segment.keep]
        core_manifest = DatasetManifest(
            name="core", records=tuple(core), assets=manifest.assets
        )
        write_manifest(core_manifest, layout.core_path)
        _write_lines(layout.audit_path, audit)

    state = StageState(layout.state_dir, "filter")
    run_sharded(
        "filter", state, [digest], worker,
        worker_count=1, retries=config.retries,
    )
    kept = sum(1 for row in _read_lines(layout.core_path))
    log.info(
        "filter: kept %d of %d segments (%s)",
        kept, len(records), config.filter_policy.identifier,
    )


# --- stats --------------------------------------------------------------

def stage_stats(config: PipelineConfig, layout: RunLayout,
                log: logging.Logger) -> None:
    """Corpus statistics over the scored manifest (or raw segments)."""
    del config
    source = (
        layout.scored_path
        if layout.scored_path.exists()
        else layout.segments_path
    )
    _require_stage_file(source, "segment")
    manifest = read_manifest(source, name="pool")
    totals = compute_dataset_stats(manifest.records)
    grouped = stats_by_group(manifest.records, manifest.assets)

    payload = {
        "total": dataclasses.asdict(totals),
        "groups": {
            "/".join(group): dataclasses.asdict(stats)
            for group, stats in grouped.items()
        },
    }
    layout.stats_path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    artifact = dataset_statistics_report(grouped, totals)
    artifact.write(layout.work_dir)
    log.info(
        "stats: %d segments, %.3f hours",
        totals.segment_count, totals.total_hours,
    )


# --- build-eval ---------------------------------------------------------

def _load_datasets_dir(
    datasets_dir: Path,
) -> dict[str, DatasetManifest]:
    manifests: dict[str, DatasetManifest] = {}
    for path in sorted(datasets_dir.glob("*.jsonl")):
        if path.name.endswith(".assets.jsonl"):
            continue
        # user-supplied file: surface parse failures as config errors
        try:
            manifests[path.stem] = read_manifest(path, name=path.stem)
        except ManifestError as exc:
            raise ConfigError(f"{path.name}: {exc}") from exc
    if not manifests:
        raise ConfigError(f"no dataset manifests under {datasets_dir}")
    return manifests


def stage_build_eval(config: PipelineConfig, layout: RunLayout,
                     log: logging.Logger) -> None:
    """Assemble the prompt-pair benchmark from curated datasets."""
    if config.paths.datasets_dir is None:
        raise ConfigError("paths.datasets_dir is required for build-eval")
    manifests = _load_datasets_dir(config.paths.datasets_dir)

    configs = []
    for category in bench.default_category_configs():
        datasets = category.datasets
        if not config.benchmark.use_default_categories:
            # Desk-scale runs: keep only the datasets actually present.
            datasets = tuple(
                name for name in category.datasets if name in manifests
            )
            if not datasets:
                continue
        configs.append(
            dataclasses.replace(
                category,
                datasets=datasets,
                prompts_per_dataset=config.benchmark.prompts_per_dataset,
            )
        )
    if not configs:
        raise ConfigError("no benchmark categories match the datasets dir")

    records_by_dataset = {
        name: list(manifest.records) for name, manifest in manifests.items()
    }
    assets_by_dataset = {
        name: manifest.assets for name, manifest in manifests.items()
    }
    scorer = make_scorer(config)
    pairs, layout_info = bench.build_benchmark(
        configs,
        records_by_dataset,
        seed=config.seed,
        assets_by_dataset=assets_by_dataset,
        asr=scorer,
    )
    bench.write_prompt_pairs(pairs, layout.benchmark_path)
    layout.benchmark_layout_path.write_text(
        layout_info.to_json() + "\n", encoding="utf-8"
    )
    log.info("build-eval: %d prompt pairs", len(pairs))


# --- evaluate -----------------------------------------------------------

def _discover_generations(
    generations_dir: Path, pairs: Sequence[bench.PromptPair],
    model_name: str,
) -> list[evalmod.GenerationRecord]:
    generations = []
    for pair in pairs:
        candidate = generations_dir / f"{pair.pair_id}{_AUDIO_EXTENSION}"
        if candidate.exists():
            generations.append(
                evalmod.GenerationRecord(
                    pair_id=pair.pair_id,
                    model_name=model_name,
                    audio_uri=str(candidate),
                )
            )
    return generations


def stage_evaluate(config: PipelineConfig, layout: RunLayout,
                   log: logging.Logger) -> None:
    """Score one model's generations against the benchmark."""
    if config.paths.generations_dir is None:
        raise ConfigError("paths.generations_dir is required for evaluate")
    _require_stage_file(layout.benchmark_path, "build-eval")
    pairs = bench.read_prompt_pairs(layout.benchmark_path)
    model_name = config.evaluate.model_name
    generations = _discover_generations(
        config.paths.generations_dir, pairs, model_name
    )
    if not generations:
        raise ConfigError(
            f"no generation audio found under {config.paths.generations_dir}"
        )
    scorer = make_scorer(config)
    prompt_audio = {
        pair.pair_id: pair.prompt_segment_id for pair in pairs
    }

    # a benchmark edited to hold untranscribed targets is a config problem
    try:
        slices = [
            evalmod.eval_wer(generations, pairs, scorer),
            evalmod.eval_sim(generations, pairs, scorer, prompt_audio),
            evalmod.eval_dnsmos(generations, pairs, scorer),
        ]
    except UndefinedRateError as exc:
        raise ConfigError(f"benchmark target text: {exc}") from exc
    layout.evaluation_dir.mkdir(parents=True, exist_ok=True)

    sample_rows = []
    tables: dict[str, evalmod.AggregateTable] = {}
    for slice_ in slices:
        tables[slice_.metric] = evalmod.aggregate_by_category(slice_)
        for sample in slice_.samples:
            sample_rows.append(
                {
                    "metric": slice_.metric,
                    "pair_id": sample.pair_id,
                    "category": sample.category,
                    "value": round(float(sample.value), 6),
                    "excluded": sample.excluded,
                    "invalid": sample.invalid,
                }
            )
        for pair_id in slice_.missing_pair_ids:
            log.warning(
                "evaluate: %s missing generation for %s",
                slice_.metric, pair_id,
            )
    sample_rows.sort(key=lambda row: (row["metric"], row["pair_id"]))
    _write_lines(
        layout.evaluation_dir / f"{model_name}_samples.jsonl", sample_rows
    )

    aggregates = {
        metric: {
            "overall": dataclasses.asdict(table.overall),
            "per_category": {
                category: dataclasses.asdict(aggregate)
                for category, aggregate in sorted(table.per_category.items())
            },
        }
        for metric, table in tables.items()
    }
    (layout.evaluation_dir / f"{model_name}_aggregates.json").write_text(
        json.dumps(aggregates, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    categories = _categories_in(pairs)
    artifact = evaluation_table_report({model_name: tables}, categories)
    artifact.write(layout.evaluation_dir)
    log.info(
        "evaluate: %s over %d generations", model_name, len(generations)
    )


def _categories_in(pairs: Sequence[bench.PromptPair]) -> list[str]:
    seen: list[str] = []
    for pair in pairs:
        if pair.category not in seen:
            seen.append(pair.category)
    return seen


# --- aggregate-mos ------------------------------------------------------

def stage_aggregate_mos(config: PipelineConfig, layout: RunLayout,
                        log: logging.Logger) -> None:
    """Aggregate subjective listening-test ratings."""
    if config.paths.subjective_file is None:
        raise ConfigError(
            "paths.subjective_file is required for aggregate-mos"
        )
    # user-supplied file: surface parse failures as config errors
    try:
        rows = _read_lines(config.paths.subjective_file)
    except ManifestError as exc:
        raise ConfigError(f"subjective_file: {exc}") from exc
    comparative: list[mosmod.SubjectiveItem] = []
    similarity: list[mosmod.SubjectiveItem] = []
    for row in rows:
        kind = str(row.get("kind", ""))
        try:
            item = mosmod.SubjectiveItem(
                page_id=str(row["page_id"]),
                item_index=int(row["item_index"]),
                annotator_id=str(row["annotator_id"]),
                model=str(row["model"]),
                rating=int(row["rating"]),
                order_flag=str(row.get("order_flag", "")),
                category=str(row.get("category", "")),
            )
        except KeyError as exc:
            raise ConfigError(
                f"subjective row is missing field {exc}"
            ) from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"subjective row: {exc}") from exc
        if kind == "cmos":
            comparative.append(item)
        elif kind == "smos":
            similarity.append(item)
        else:
            raise ConfigError(
                f"subjective row needs kind 'cmos' or 'smos', got {kind!r}"
            )

    payload: dict[str, dict] = {}
    try:
        if comparative:
            payload["cmos"] = _mos_payload(mosmod.aggregate_cmos(comparative))
        if similarity:
            payload["smos"] = _mos_payload(mosmod.aggregate_smos(similarity))
    except mosmod.SubjectiveValidationError as exc:
        raise ConfigError(f"subjective ratings: {exc}") from exc
    layout.mos_path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    log.info(
        "aggregate-mos: %d comparative, %d similarity items",
        len(comparative), len(similarity),
    )


def _mos_payload(
    aggregates: dict[tuple[str, str], mosmod.MosAggregate],
) -> dict[str, dict]:
    return {
        f"{model}/{category}": {
            "mean": round(aggregate.mean, 6),
            "ci_half_width": round(aggregate.ci_half_width, 6),
            "count": aggregate.count,
        }
        for (model, category), aggregate in sorted(aggregates.items())
    }


# --- report -------------------------------------------------------------

def _per_metric_thresholds(
    records: Sequence[Segment], config: PipelineConfig,
) -> dict[str, float | None]:
    """Per-metric cutoffs to annotate on the histograms.

    These are the tail cutoffs the per-metric policy would use at the
    configured percentile: low tail for quality scores, high tail for
    error rates. Configured absolute overrides win.
    """
    from .filtering import METRICS, compute_percentile

    policy = config.filter_policy
    overrides = policy.absolute_overrides or {}
    thresholds: dict[str, float | None] = {}
    for metric in METRICS:
        if metric in overrides:
            thresholds[metric] = float(overrides[metric])
            continue
        values = [
            float(getattr(segment, metric))
            for segment in records
            if getattr(segment, metric) is not None
        ]
        if not values:
            thresholds[metric] = None
        elif metric == "wer":
            thresholds[metric] = compute_percentile(
                values, 100.0 - policy.removal_percentile
            )
        else:
            thresholds[metric] = compute_percentile(
                values, policy.removal_percentile
            )
    return thresholds


def stage_report(config: PipelineConfig, layout: RunLayout,
                 log: logging.Logger) -> None:
    """Tables and distribution plots for a completed run."""
    _require_stage_file(layout.scored_path, "score")
    manifest = read_manifest(layout.scored_path, name="scored")
    records = list(manifest.records)
    layout.report_dir.mkdir(parents=True, exist_ok=True)

    totals = compute_dataset_stats(records)
    grouped = stats_by_group(records, manifest.assets)
    artifacts = [dataset_statistics_report(grouped, totals)]

    if layout.core_path.exists():
        core = read_manifest(layout.core_path, name="core").records
        report = retention_report(records, list(core), manifest.assets)
        artifacts.append(retention_table_report(report))

    aggregate_files = sorted(
        layout.evaluation_dir.glob("*_aggregates.json")
    ) if layout.evaluation_dir.exists() else []
    if aggregate_files:
        tables = {
            path.name[: -len("_aggregates.json")]:
                _tables_from_json(path)
            for path in aggregate_files
        }
        categories = sorted(
            {
                category
                for per_metric in tables.values()
                for table in per_metric.values()
                for category in table.per_category
            }
        )
        artifacts.append(evaluation_table_report(tables, categories))

    written: list[Path] = []
    for artifact in artifacts:
        written.extend(artifact.write(layout.report_dir))

    thresholds = _per_metric_thresholds(records, config)
    written.extend(
        score_histograms(records, thresholds, layout.report_dir)
    )
    log.info("report: wrote %d files", len(written))


def _tables_from_json(path: Path) -> dict[str, evalmod.AggregateTable]:
    raw = json.loads(path.read_text(encoding="utf-8"))
    tables = {}
    for metric, body in raw.items():
        overall = evalmod.CategoryAggregate(**body["overall"])
        per_category = {
            category: evalmod.CategoryAggregate(**aggregate)
            for category, aggregate in body["per_category"].items()
        }
        tables[metric] = evalmod.AggregateTable(
            metric=metric, per_category=per_category, overall=overall
        )
    return tables


_STAGE_FUNCTIONS = {
    "ingest": stage_ingest,
    "segment": stage_segment,
    "score": stage_score,
    "filter": stage_filter,
    "stats": stage_stats,
    "build-eval": stage_build_eval,
    "evaluate": stage_evaluate,
    "aggregate-mos": stage_aggregate_mos,
    "report": stage_report,
}


def run_stage(stage: str, config: PipelineConfig) -> None:
    """Entry point used by the command line: one named stage."""
    if stage not in _STAGE_FUNCTIONS:
        raise ConfigError(f"unknown stage {stage!r}")
    layout = RunLayout(config.paths.work_dir)
    layout.work_dir.mkdir(parents=True, exist_ok=True)
    log = run_logger(layout)
    log.info("start %s", stage)
    try:
        _STAGE_FUNCTIONS[stage](config, layout, log)
    except Exception:
        log.exception("stage %s failed", stage)
        raise
    log.info("done %s", stage)
