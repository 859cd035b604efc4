"""Segment quality scoring and filtering strategies.

Two filter families: per-metric percentile/absolute thresholds, and the
combined rank filter (per-metric quality ranks averaged into one score,
cut at a percentile). Plus retention reporting and ablation subsetting.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Mapping, Protocol, Sequence

import numpy as np
from scipy import stats

from .adapters import ScorerUnavailableError
from .manifest import Asset, Segment
from .randomness import derived_rng
from .segmentation import SpeechRegion, overlap_seconds
from .text_metrics import UndefinedRateError, wer_of_strings

FILTER_MODES = ("wer", "dnsmos", "vad", "combined", "none")
METRICS = ("dnsmos", "speech_ratio", "wer")
# Published operating points for absolute-threshold runs.
DEFAULT_ABSOLUTE_OVERRIDES: Mapping[str, float] = {
    "dnsmos": 2.24,
    "speech_ratio": 0.79,
    "wer": 0.35,
}
_MODE_METRIC = {"wer": "wer", "dnsmos": "dnsmos", "vad": "speech_ratio"}


class UnscoredRecordError(ValueError):
    """A filter needed a quality score the record does not carry."""


@dataclass(frozen=True)
class FilterPolicy:
    mode: str = "combined"
    removal_percentile: float = 15.0
    absolute_overrides: Mapping[str, float] | None = None

    def __post_init__(self) -> None:
        if self.mode not in FILTER_MODES:
            raise ValueError(f"mode must be one of {FILTER_MODES}")
        if not 0.0 <= self.removal_percentile <= 100.0:
            raise ValueError("removal_percentile must be in [0, 100]")

    @property
    def identifier(self) -> str:
        if self.mode == "none":
            return "none"
        if self.absolute_overrides:
            pairs = ",".join(
                f"{k}={self.absolute_overrides[k]}"
                for k in sorted(self.absolute_overrides)
            )
            return f"{self.mode}:absolute[{pairs}]"
        return f"{self.mode}:p{self.removal_percentile:g}"


@dataclass(frozen=True)
class RankedSegment:
    segment_id: str
    dnsmos_rank: float
    speech_ratio_rank: float
    wer_rank: float
    combined_score: float


@dataclass(frozen=True)
class RetentionRow:
    dataset: str
    sub_split: str
    pool_count: int
    core_count: int

    @property
    def retention_percent(self) -> float:
        if self.pool_count == 0:
            return 0.0
        return self.core_count / self.pool_count * 100.0


@dataclass(frozen=True)
class RetentionReport:
    rows: tuple[RetentionRow, ...]

    @property
    def totals(self) -> RetentionRow:
        pool = sum(row.pool_count for row in self.rows)
        core = sum(row.core_count for row in self.rows)
        return RetentionRow("total", "", pool, core)


def compute_percentile(values: Sequence[float], p: float) -> float:
    """Linear-interpolation percentile: index i = p/100 * (n-1)."""
    if len(values) == 0:
        raise ValueError("percentile of an empty list is undefined")
    if not 0.0 <= p <= 100.0:
        raise ValueError("p must be in [0, 100]")
    return float(np.percentile(np.asarray(values, dtype=np.float64), p))


def _metric_values(records: Sequence[Segment], metric: str) -> np.ndarray:
    values = []
    for record in records:
        value = getattr(record, metric)
        if value is None:
            raise UnscoredRecordError(
                f"record {record.segment_id!r} has no {metric} score"
            )
        values.append(float(value))
    return np.asarray(values, dtype=np.float64)


def per_metric_filter(
    records: Sequence[Segment], metric: str, policy: FilterPolicy
) -> tuple[list[Segment], list[Segment], float]:
    """Threshold one metric, orientation-aware; boundary values are kept.

    dnsmos and speech_ratio drop below the threshold (their p-th
    percentile); wer drops above it (its (100-p)-th percentile, since high
    wer is the bad tail). Absolute overrides bypass the percentile.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    values = _metric_values(records, metric)
    overrides = policy.absolute_overrides or {}
    if metric in overrides:
        threshold = float(overrides[metric])
    elif metric == "wer":
        threshold = compute_percentile(values, 100.0 - policy.removal_percentile)
    else:
        threshold = compute_percentile(values, policy.removal_percentile)
    kept, dropped = [], []
    for record, value in zip(records, values):
        if metric == "wer":
            bad = value > threshold
        else:
            bad = value < threshold
        (dropped if bad else kept).append(record)
    return kept, dropped, threshold


def rank_segments(records: Sequence[Segment]) -> list[RankedSegment]:
    """Quality-ascending ranks per metric (1 = worst, ties averaged),
    averaged into one combined score. Order-independent by construction."""
    dnsmos = stats.rankdata(_metric_values(records, "dnsmos"), method="average")
    ratio = stats.rankdata(
        _metric_values(records, "speech_ratio"), method="average"
    )
    wer = stats.rankdata(-_metric_values(records, "wer"), method="average")
    return [
        RankedSegment(
            segment_id=record.segment_id,
            dnsmos_rank=float(dnsmos[i]),
            speech_ratio_rank=float(ratio[i]),
            wer_rank=float(wer[i]),
            combined_score=float((dnsmos[i] + ratio[i] + wer[i]) / 3.0),
        )
        for i, record in enumerate(records)
    ]


def combined_rank_filter(
    records: Sequence[Segment], policy: FilterPolicy
) -> tuple[list[Segment], list[Segment], list[RankedSegment], float]:
    """Drop the low tail of the combined rank score; boundary values kept."""
    ranked = rank_segments(records)
    combined = [r.combined_score for r in ranked]
    cutoff = compute_percentile(combined, policy.removal_percentile)
    kept, dropped = [], []
    for record, rank in zip(records, ranked):
        (dropped if rank.combined_score < cutoff else kept).append(record)
    return kept, dropped, ranked, cutoff


def apply_filter_policy(
    records: Sequence[Segment], policy: FilterPolicy
) -> tuple[list[Segment], list[dict[str, Any]]]:
    """Run a policy, returning records with the keep column set plus
    audit rows (one per record) for the filter-audit file."""
    if policy.mode == "none":
        return (
            [replace(r, keep=True) for r in records],
            [
                {"segment_id": r.segment_id, "keep": True,
                 "policy": policy.identifier}
                for r in records
            ],
        )
    if policy.mode == "combined":
        kept, _, ranked, cutoff = combined_rank_filter(records, policy)
        kept_ids = {r.segment_id for r in kept}
        out = [replace(r, keep=r.segment_id in kept_ids) for r in records]
        audit = [
            {
                "segment_id": rank.segment_id,
                "dnsmos_rank": rank.dnsmos_rank,
                "speech_ratio_rank": rank.speech_ratio_rank,
                "wer_rank": rank.wer_rank,
                "combined_score": rank.combined_score,
                "cutoff": cutoff,
                "keep": rank.segment_id in kept_ids,
                "policy": policy.identifier,
            }
            for rank in ranked
        ]
        return out, audit
    metric = _MODE_METRIC[policy.mode]
    kept, _, threshold = per_metric_filter(records, metric, policy)
    kept_ids = {r.segment_id for r in kept}
    out = [replace(r, keep=r.segment_id in kept_ids) for r in records]
    audit = [
        {
            "segment_id": r.segment_id,
            "metric": metric,
            "value": getattr(r, metric),
            "threshold": threshold,
            "keep": r.segment_id in kept_ids,
            "policy": policy.identifier,
        }
        for r in records
    ]
    return out, audit


def retention_report(
    pool: Sequence[Segment],
    core: Sequence[Segment],
    assets: Mapping[str, Asset] | Sequence[Asset],
) -> RetentionReport:
    """Per-source retention of core segments relative to the pool."""
    if not isinstance(assets, Mapping):
        assets = {a.asset_id: a for a in assets}

    def group_of(record: Segment) -> tuple[str, str]:
        asset = assets.get(record.asset_id)
        if asset is None:
            raise ValueError(
                f"segment {record.segment_id!r} references unknown asset"
            )
        return asset.source_dataset, asset.sub_split

    pool_ids = {r.segment_id for r in pool}
    pool_counts: dict[tuple[str, str], int] = {}
    for record in pool:
        key = group_of(record)
        pool_counts[key] = pool_counts.get(key, 0) + 1
    core_counts: dict[tuple[str, str], int] = {}
    for record in core:
        if record.segment_id not in pool_ids:
            raise ValueError(
                f"core segment {record.segment_id!r} absent from pool"
            )
        key = group_of(record)
        core_counts[key] = core_counts.get(key, 0) + 1
    rows = tuple(
        RetentionRow(dataset, sub_split, pool_counts[key],
                     core_counts.get(key, 0))
        for key in sorted(pool_counts)
        for dataset, sub_split in [key]
    )
    return RetentionReport(rows)


def matched_subset(
    records: Sequence[Segment],
    assets: Mapping[str, Asset] | Sequence[Asset],
    target_hours: float,
    seed: int,
) -> list[Segment]:
    """Seeded uniform sample totalling target_hours, proportional across
    source datasets. Greedy per-dataset fill under each proportional
    share, then a global top-up that stops at the closest total."""
    if not isinstance(assets, Mapping):
        assets = {a.asset_id: a for a in assets}
    total_s = sum(r.duration_s for r in records)
    target_s = target_hours * 3600.0
    if target_s > total_s * (1.0 + 1e-9):
        raise ValueError(
            f"target {target_hours} h exceeds available {total_s / 3600.0} h"
        )
    by_dataset: dict[str, list[Segment]] = {}
    for record in records:
        asset = assets.get(record.asset_id)
        if asset is None:
            raise ValueError(
                f"segment {record.segment_id!r} references unknown asset"
            )
        by_dataset.setdefault(asset.source_dataset, []).append(record)

    chosen: list[Segment] = []
    leftovers: list[Segment] = []
    acc_total = 0.0
    for dataset in sorted(by_dataset):
        members = sorted(by_dataset[dataset], key=lambda r: r.segment_id)
        rng = derived_rng(seed, "matched-subset", dataset)
        order = rng.permutation(len(members))
        share_s = target_s * sum(m.duration_s for m in members) / total_s
        acc = 0.0
        for index in order:
            record = members[index]
            if acc + record.duration_s <= share_s:
                chosen.append(record)
                acc += record.duration_s
            else:
                leftovers.append(record)
        acc_total += acc
    rng = derived_rng(seed, "matched-subset", "top-up")
    leftovers.sort(key=lambda r: r.segment_id)
    for index in rng.permutation(len(leftovers)):
        record = leftovers[index]
        gain = abs(acc_total + record.duration_s - target_s)
        if gain < abs(acc_total - target_s):
            chosen.append(record)
            acc_total += record.duration_s
    return sorted(chosen, key=lambda r: (r.asset_id, r.start_s, r.segment_id))


def exclude_source(
    records: Sequence[Segment],
    assets: Mapping[str, Asset] | Sequence[Asset],
    dataset_name: str,
) -> list[Segment]:
    if not isinstance(assets, Mapping):
        assets = {a.asset_id: a for a in assets}
    return [
        record
        for record in records
        if assets[record.asset_id].source_dataset != dataset_name
    ]


class SegmentScorer(Protocol):
    """Adapter surface score_segments needs."""

    def transcribe(
        self, audio_ref: str, start_s: float | None = None,
        end_s: float | None = None, **options: Any,
    ) -> str: ...

    def dnsmos(
        self, audio_ref: str, start_s: float | None = None,
        end_s: float | None = None, **options: Any,
    ) -> float: ...

    def vad(
        self, audio_ref: str, start_s: float | None = None,
        end_s: float | None = None, **options: Any,
    ) -> list[tuple[float, float]]: ...


def score_segments(
    records: Sequence[Segment],
    assets: Mapping[str, Asset] | Sequence[Asset],
    scorer: SegmentScorer,
    force: bool = False,
) -> tuple[list[Segment], list[dict[str, str]]]:
    """Attach dnsmos, wer, and speech_ratio to every record.

    Idempotent: already-scored records are skipped unless forced.
    Per-segment adapter failures never abort the batch; the score stays
    absent and the reason lands in a tag plus the returned failure list.
    """
    if not isinstance(assets, Mapping):
        assets = {a.asset_id: a for a in assets}
    scored: list[Segment] = []
    failures: list[dict[str, str]] = []
    for record in records:
        if (
            not force
            and record.dnsmos is not None
            and record.wer is not None
            and record.speech_ratio is not None
        ):
            scored.append(record)
            continue
        asset = assets.get(record.asset_id)
        if asset is None:
            raise ValueError(
                f"segment {record.segment_id!r} references unknown asset"
            )
        updates: dict[str, Any] = {}
        tags = dict(record.tags)
        for metric in METRICS:
            try:
                if metric == "dnsmos":
                    updates["dnsmos"] = float(
                        scorer.dnsmos(asset.uri, record.start_s, record.end_s)
                    )
                elif metric == "speech_ratio":
                    turns = scorer.vad(asset.uri, record.start_s, record.end_s)
                    regions = [SpeechRegion(s, e) for s, e in turns]
                    overlap = overlap_seconds(
                        record.start_s, record.end_s, regions
                    )
                    updates["speech_ratio"] = min(
                        max(overlap / record.duration_s, 0.0), 1.0
                    )
                else:
                    hypothesis = scorer.transcribe(
                        asset.uri,
                        record.start_s,
                        record.end_s,
                        reference_hint=record.text,
                    )
                    updates["wer"] = wer_of_strings(record.text, hypothesis)
            except UndefinedRateError as exc:
                tags[f"score_error.{metric}"] = str(exc)
                failures.append(
                    {"segment_id": record.segment_id, "metric": metric,
                     "reason": str(exc)}
                )
            except ScorerUnavailableError:
                # nothing reaches the service: abort instead of writing
                # a fully unscored manifest
                raise
            except Exception as exc:  # per-segment failures must not abort
                tags[f"score_error.{metric}"] = f"{type(exc).__name__}: {exc}"
                failures.append(
                    {"segment_id": record.segment_id, "metric": metric,
                     "reason": f"{type(exc).__name__}: {exc}"}
                )
        scored.append(replace(record, tags=tags, **updates))
    return scored, failures
