"""Evaluation benchmark construction.

Twelve source datasets grouped into four acoustic regimes; 500 prompts per
dataset chosen by stratified sampling, each paired with a target text drawn
from a different segment of the same dataset.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .manifest import Asset, ManifestError, Segment, dump_line, parse_line
from .randomness import derived_rng
from .text_metrics import wer_of_strings

CATEGORIES = ("Clean", "Noisy", "Wild", "Expressive")
DEFAULT_STRATA_KEYS = ("speaker_id", "emotion", "dialect", "style")


@dataclass(frozen=True)
class CategoryConfig:
    category: str
    datasets: tuple[str, ...]
    prompts_per_dataset: int = 500
    strata_keys: tuple[str, ...] = DEFAULT_STRATA_KEYS
    # Datasets whose transcripts are unreliable get an ASR-agreement gate.
    zero_wer_datasets: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise ValueError(f"category must be one of {CATEGORIES}")
        if self.prompts_per_dataset <= 0:
            raise ValueError("prompts_per_dataset must be positive")


def default_category_configs() -> tuple[CategoryConfig, ...]:
    return (
        CategoryConfig(
            "Clean",
            (
                "LibriSpeech-clean",
                "ST-American-English",
                "CMU-ARCTIC",
                "L2-ARCTIC",
                "VCTK",
            ),
        ),
        CategoryConfig("Noisy", ("LibriSpeech-other", "TED-LIUM3")),
        CategoryConfig(
            "Wild", ("AMI-IHM", "AMI-SDM"), zero_wer_datasets=("AMI-SDM",)
        ),
        CategoryConfig("Expressive", ("Expresso", "CREMA-D", "EmoV-DB")),
    )


@dataclass(frozen=True)
class PromptPair:
    pair_id: str
    category: str
    source_dataset: str
    prompt_segment_id: str
    prompt_text: str
    target_text: str
    target_source_segment_id: str

    def validate(self) -> "PromptPair":
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.target_source_segment_id == self.prompt_segment_id:
            raise ValueError(
                f"pair {self.pair_id!r}: target must come from a different "
                "segment than the prompt"
            )
        return self

    def to_record(self) -> dict[str, Any]:
        return {
            "pair_id": self.pair_id,
            "category": self.category,
            "source_dataset": self.source_dataset,
            "prompt_segment_id": self.prompt_segment_id,
            "prompt_text": self.prompt_text,
            "target_text": self.target_text,
            "target_source_segment_id": self.target_source_segment_id,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "PromptPair":
        try:
            return cls(
                pair_id=str(record["pair_id"]),
                category=str(record["category"]),
                source_dataset=str(record["source_dataset"]),
                prompt_segment_id=str(record["prompt_segment_id"]),
                prompt_text=str(record["prompt_text"]),
                target_text=str(record["target_text"]),
                target_source_segment_id=str(
                    record["target_source_segment_id"]
                ),
            ).validate()
        except KeyError as exc:
            raise ManifestError(f"prompt pair missing key {exc}") from exc


def zero_wer_prefilter(
    records: Sequence[Segment],
    assets: Mapping[str, Asset] | Sequence[Asset],
    asr: Any,
) -> tuple[list[Segment], list[dict[str, str]]]:
    """Keep only segments whose ASR transcript matches the annotation
    exactly (normalized WER of zero)."""
    if not isinstance(assets, Mapping):
        assets = {a.asset_id: a for a in assets}
    kept: list[Segment] = []
    audit: list[dict[str, str]] = []
    for record in records:
        asset = assets.get(record.asset_id)
        if asset is None:
            raise ValueError(
                f"segment {record.segment_id!r} references unknown asset"
            )
        try:
            hypothesis = asr.transcribe(
                asset.uri,
                record.start_s,
                record.end_s,
                reference_hint=record.text,
            )
            rate = wer_of_strings(record.text, hypothesis)
        except Exception as exc:
            audit.append(
                {
                    "segment_id": record.segment_id,
                    "reason": f"{type(exc).__name__}: {exc}",
                }
            )
            continue
        if rate == 0.0:
            kept.append(record)
        else:
            audit.append(
                {"segment_id": record.segment_id, "reason": f"wer={rate:.6f}"}
            )
    return kept, audit


def _stratum_of(record: Segment, strata_keys: Sequence[str]) -> str:
    for key in strata_keys:
        if key == "speaker_id" and record.speaker_id:
            return f"speaker_id={record.speaker_id}"
        if record.tags.get(key):
            return f"{key}={record.tags[key]}"
    return ""


def _allocate_quotas(sizes: Mapping[str, int], n: int) -> dict[str, int]:
    """Equal-as-possible allocation: quotas differ by at most one where
    capacity allows; remainders go to the largest strata first, ties by
    stratum name."""
    quotas = {name: 0 for name in sizes}
    remaining = n
    while remaining > 0:
        open_strata = [
            name for name in sizes if quotas[name] < sizes[name]
        ]
        open_strata.sort(key=lambda name: (quotas[name], -sizes[name], name))
        took = False
        for name in open_strata:
            if remaining == 0:
                break
            quotas[name] += 1
            remaining -= 1
            took = True
        if not took:
            raise ValueError("not enough records to satisfy the request")
    return quotas


def stratified_sample(
    records: Sequence[Segment],
    n: int,
    strata_keys: Sequence[str] = DEFAULT_STRATA_KEYS,
    seed: int = 0,
) -> list[Segment]:
    """Sample n records, balanced across strata.

    Each record's stratum comes from the first strata key it carries;
    records with none share an unlabeled stratum, so a corpus without
    metadata degrades to plain uniform sampling.
    """
    if n > len(records):
        raise ValueError(f"cannot sample {n} from {len(records)} records")
    strata: dict[str, list[Segment]] = {}
    for record in records:
        strata.setdefault(_stratum_of(record, strata_keys), []).append(record)
    sizes = {name: len(members) for name, members in strata.items()}
    quotas = _allocate_quotas(sizes, n)
    chosen: list[Segment] = []
    for name in sorted(strata):
        members = sorted(strata[name], key=lambda r: r.segment_id)
        rng = derived_rng(seed, "stratified-sample", name)
        picks = rng.choice(len(members), size=quotas[name], replace=False)
        chosen.extend(members[i] for i in sorted(picks))
    return sorted(chosen, key=lambda r: r.segment_id)


def pair_prompts(
    sampled: Sequence[Segment],
    full_dataset: Sequence[Segment],
    seed: int,
    category: str = "Clean",
    source_dataset: str = "dataset",
) -> list[PromptPair]:
    """Pair each prompt with a target text from a different segment.

    Targets are drawn uniformly (seeded) and stay unique while unused
    candidates remain; only after the supply is exhausted may a target
    be reused. Untranscribed segments may serve as prompts (the prompt
    side only contributes audio) but never as targets.
    """
    if len(full_dataset) < 2:
        raise ValueError(
            f"dataset {source_dataset!r} needs at least 2 segments to pair"
        )
    pool = sorted(
        (r for r in full_dataset if r.text.strip()),
        key=lambda r: r.segment_id,
    )
    if not pool:
        raise ValueError(
            f"dataset {source_dataset!r} has no transcribed segments to "
            "draw target texts from"
        )
    rng = derived_rng(seed, "pair-targets", source_dataset)
    unused = list(pool)
    pairs: list[PromptPair] = []
    for index, prompt in enumerate(
        sorted(sampled, key=lambda r: r.segment_id)
    ):
        candidates = unused
        if not candidates or (
            len(candidates) == 1
            and candidates[0].segment_id == prompt.segment_id
        ):
            candidates = pool  # supply exhausted: allow reuse
        if (
            len(candidates) == 1
            and candidates[0].segment_id == prompt.segment_id
        ):
            raise ValueError(
                f"dataset {source_dataset!r}: {prompt.segment_id!r} is the "
                "only transcribed segment, so it cannot take a target"
            )
        while True:
            pick = int(rng.integers(len(candidates)))
            target = candidates[pick]
            if target.segment_id != prompt.segment_id:
                break
        if candidates is unused:
            unused.pop(pick)
        pairs.append(
            PromptPair(
                pair_id=f"{source_dataset}:{index:04d}",
                category=category,
                source_dataset=source_dataset,
                prompt_segment_id=prompt.segment_id,
                prompt_text=prompt.text,
                target_text=target.text,
                target_source_segment_id=target.segment_id,
            ).validate()
        )
    return pairs


@dataclass(frozen=True)
class BenchmarkLayout:
    seed: int
    config_hash: str
    rows: tuple[dict[str, Any], ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "config_hash": self.config_hash,
                "rows": list(self.rows),
            },
            sort_keys=True,
            indent=2,
        )


def _config_hash(configs: Sequence[CategoryConfig]) -> str:
    canonical = json.dumps(
        [
            {
                "category": c.category,
                "datasets": list(c.datasets),
                "prompts_per_dataset": c.prompts_per_dataset,
                "strata_keys": list(c.strata_keys),
                "zero_wer_datasets": list(c.zero_wer_datasets),
            }
            for c in configs
        ],
        sort_keys=True,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def build_benchmark(
    configs: Sequence[CategoryConfig],
    records_by_dataset: Mapping[str, Sequence[Segment]],
    seed: int,
    assets_by_dataset: Mapping[str, Mapping[str, Asset]] | None = None,
    asr: Any = None,
) -> tuple[list[PromptPair], BenchmarkLayout]:
    """Assemble the full benchmark across all configured datasets."""
    pairs: list[PromptPair] = []
    rows: list[dict[str, Any]] = []
    for config in configs:
        for dataset in config.datasets:
            if dataset not in records_by_dataset:
                raise ValueError(f"no manifest provided for {dataset!r}")
            eligible = list(records_by_dataset[dataset])
            prefiltered = 0
            if dataset in config.zero_wer_datasets:
                if asr is None or assets_by_dataset is None:
                    raise ValueError(
                        f"{dataset!r} requires the ASR-agreement gate but no "
                        "ASR adapter/assets were provided"
                    )
                before = len(eligible)
                eligible, _ = zero_wer_prefilter(
                    eligible, assets_by_dataset[dataset], asr
                )
                prefiltered = before - len(eligible)
            if len(eligible) < config.prompts_per_dataset:
                raise ValueError(
                    f"dataset {dataset!r} has only {len(eligible)} eligible "
                    f"records; need {config.prompts_per_dataset}"
                )
            sampled = stratified_sample(
                eligible, config.prompts_per_dataset, config.strata_keys, seed
            )
            dataset_pairs = pair_prompts(
                sampled, eligible, seed, config.category, dataset
            )
            pairs.extend(dataset_pairs)
            rows.append(
                {
                    "category": config.category,
                    "dataset": dataset,
                    "eligible": len(eligible),
                    "prefiltered_out": prefiltered,
                    "pairs": len(dataset_pairs),
                }
            )
    layout = BenchmarkLayout(
        seed=seed, config_hash=_config_hash(configs), rows=tuple(rows)
    )
    order = {category: i for i, category in enumerate(CATEGORIES)}
    pairs.sort(key=lambda p: (order[p.category], p.source_dataset, p.pair_id))
    return pairs, layout


def write_prompt_pairs(pairs: Iterable[PromptPair], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for pair in pairs:
            handle.write(dump_line(pair.validate().to_record()) + "\n")
            count += 1
    return count


def read_prompt_pairs(path: str | Path) -> list[PromptPair]:
    pairs = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if line:
                pairs.append(PromptPair.from_record(parse_line(line, lineno)))
    return pairs
