"""Objective evaluation over benchmark generations and model ranking.

Per-sample WER (with the hallucination-exclusion rule), speaker-similarity
cosine, and DNSMOS, aggregated per acoustic category and pooled overall.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .benchmark import PromptPair
from .text_metrics import UndefinedRateError, wer_of_strings


class ScoreProtocolError(ValueError):
    """An adapter returned a value outside its documented contract."""


@dataclass(frozen=True)
class GenerationRecord:
    pair_id: str
    model_name: str
    audio_uri: str


@dataclass(frozen=True)
class SampleScore:
    pair_id: str
    category: str
    value: float
    excluded: bool = False  # WER > 1.0 hallucination rule
    invalid: bool = False  # e.g. zero-norm embedding

    @property
    def countable(self) -> bool:
        return not self.excluded and not self.invalid


@dataclass(frozen=True)
class MetricSlice:
    metric: str
    samples: tuple[SampleScore, ...]
    missing_pair_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class CategoryAggregate:
    mean: float
    count: int


@dataclass(frozen=True)
class AggregateTable:
    metric: str
    per_category: Mapping[str, CategoryAggregate]
    overall: CategoryAggregate


def _pair_index(pairs: Sequence[PromptPair]) -> dict[str, PromptPair]:
    index = {pair.pair_id: pair for pair in pairs}
    if len(index) != len(pairs):
        raise ValueError("duplicate pair_id in benchmark")
    return index


def _match_generations(
    generations: Sequence[GenerationRecord], pairs: Sequence[PromptPair]
) -> tuple[list[tuple[GenerationRecord, PromptPair]], list[str]]:
    index = _pair_index(pairs)
    by_pair = {}
    for generation in generations:
        if generation.pair_id not in index:
            raise ValueError(
                f"generation for unknown pair_id {generation.pair_id!r}"
            )
        by_pair[generation.pair_id] = generation
    matched = []
    missing = []
    for pair in pairs:
        generation = by_pair.get(pair.pair_id)
        if generation is None:
            missing.append(pair.pair_id)
        else:
            matched.append((generation, index[pair.pair_id]))
    return matched, missing


def eval_wer(
    generations: Sequence[GenerationRecord],
    pairs: Sequence[PromptPair],
    asr: Any,
) -> MetricSlice:
    """Per-sample WER of the generation's transcript against the pair's
    target text. Samples above 1.0 are flagged as hallucinations and
    excluded from aggregates; pairs with no generation are reported as
    missing, never silently skipped."""
    matched, missing = _match_generations(generations, pairs)
    samples = []
    for generation, pair in matched:
        hypothesis = asr.transcribe(
            generation.audio_uri, reference_hint=pair.target_text
        )
        try:
            rate = wer_of_strings(pair.target_text, hypothesis)
        except UndefinedRateError as exc:
            raise UndefinedRateError(
                f"pair {pair.pair_id!r}: {exc}"
            ) from exc
        samples.append(
            SampleScore(
                pair_id=pair.pair_id,
                category=pair.category,
                value=rate,
                excluded=rate > 1.0,
            )
        )
    return MetricSlice("wer", tuple(samples), tuple(missing))


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    norm = float(np.linalg.norm(a) * np.linalg.norm(b))
    if norm == 0.0:
        raise ZeroDivisionError("zero-norm embedding")
    return float(np.dot(a, b) / norm)


def eval_sim(
    generations: Sequence[GenerationRecord],
    pairs: Sequence[PromptPair],
    embedder: Any,
    prompt_audio: Mapping[str, str],
) -> MetricSlice:
    """Cosine similarity between prompt and generation embeddings.

    prompt_audio maps pair_id to the prompt segment's audio reference.
    Zero-norm embeddings flag the sample invalid rather than erroring."""
    matched, missing = _match_generations(generations, pairs)
    samples = []
    for generation, pair in matched:
        prompt_ref = prompt_audio.get(pair.pair_id)
        if prompt_ref is None:
            missing += (pair.pair_id,)
            continue
        prompt_vec = np.asarray(embedder.embed(prompt_ref), dtype=np.float64)
        generated_vec = np.asarray(
            embedder.embed(generation.audio_uri), dtype=np.float64
        )
        try:
            value = cosine_similarity(prompt_vec, generated_vec)
            invalid = False
        except ZeroDivisionError:
            value = 0.0
            invalid = True
        samples.append(
            SampleScore(
                pair_id=pair.pair_id,
                category=pair.category,
                value=value,
                invalid=invalid,
            )
        )
    return MetricSlice("sim", tuple(samples), tuple(missing))


def eval_dnsmos(
    generations: Sequence[GenerationRecord],
    pairs: Sequence[PromptPair],
    scorer: Any,
) -> MetricSlice:
    matched, missing = _match_generations(generations, pairs)
    samples = []
    for generation, pair in matched:
        value = float(scorer.dnsmos(generation.audio_uri))
        if not 1.0 <= value <= 5.0:
            raise ScoreProtocolError(
                f"dnsmos {value} outside [1, 5] for pair "
                f"{pair.pair_id!r}"
            )
        samples.append(
            SampleScore(
                pair_id=pair.pair_id, category=pair.category, value=value
            )
        )
    return MetricSlice("dnsmos", tuple(samples), tuple(missing))


def aggregate_by_category(slice_: MetricSlice) -> AggregateTable:
    """Category means plus the pooled overall mean.

    Overall is computed over all countable samples, not as a mean of the
    category means, so categories weigh by their sample counts. Empty
    categories simply do not appear."""
    per_category: dict[str, list[float]] = {}
    pooled: list[float] = []
    for sample in slice_.samples:
        if not sample.countable:
            continue
        per_category.setdefault(sample.category, []).append(sample.value)
        pooled.append(sample.value)
    categories = {
        category: CategoryAggregate(float(np.mean(values)), len(values))
        for category, values in sorted(per_category.items())
    }
    overall = CategoryAggregate(
        float(np.mean(pooled)) if pooled else float("nan"), len(pooled)
    )
    return AggregateTable(slice_.metric, categories, overall)


@dataclass(frozen=True)
class ModelRanking:
    models: tuple[str, ...]
    per_metric_ranks: Mapping[str, Mapping[str, float]]  # metric -> model -> rank
    average_rank: Mapping[str, float]


def rank_models(
    scores: Mapping[str, Mapping[str, float]],
    lower_is_better: Iterable[str] = ("wer",),
) -> ModelRanking:
    """Rank models per metric (1 = best, ties averaged) and average the
    ranks across metrics. Metrics in lower_is_better rank ascending;
    everything else ranks descending."""
    models = tuple(sorted(scores))
    if len(models) < 2:
        raise ValueError("ranking needs at least 2 models")
    metric_names: tuple[str, ...] = tuple(sorted(scores[models[0]]))
    for model in models:
        if tuple(sorted(scores[model])) != metric_names:
            raise ValueError(
                f"model {model!r} is missing metrics; all models must share "
                "the same metric set"
            )
    lower = set(lower_is_better)
    per_metric: dict[str, dict[str, float]] = {}
    for metric in metric_names:
        values = np.array(
            [float(scores[model][metric]) for model in models]
        )
        oriented = values if metric in lower else -values
        ranks = stats.rankdata(oriented, method="average")
        per_metric[metric] = {
            model: float(rank) for model, rank in zip(models, ranks)
        }
    average = {
        model: float(
            np.mean([per_metric[metric][model] for metric in metric_names])
        )
        for model in models
    }
    return ModelRanking(models, per_metric, average)
