"""Segment and asset manifests: validated records with JSONL persistence.

A manifest is a plain-text file with one JSON object per line, so shards can
be concatenated with `cat` and still parse. Nested tag maps are flattened to
``tags.<key>`` columns so every line stays a flat key-value record.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

TIME_DECIMALS = 3
SCORE_DECIMALS = 6

_SEGMENT_REQUIRED = ("segment_id", "asset_id", "start_s", "end_s", "text")
_SEGMENT_OPTIONAL = ("speaker_id", "dnsmos", "wer", "speech_ratio", "keep")
_ASSET_REQUIRED = (
    "asset_id",
    "uri",
    "duration_s",
    "sample_rate_hz",
    "channels",
    "source_dataset",
    "sub_split",
    "language",
    "license",
)


class ManifestError(ValueError):
    """Raised when a record fails validation or a line cannot be parsed."""


def _round_time(value: float) -> float:
    return round(float(value), TIME_DECIMALS)


def _round_score(value: float) -> float:
    return round(float(value), SCORE_DECIMALS)


def _require_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ManifestError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class Segment:
    """One utterance-level slice of a source asset."""

    segment_id: str
    asset_id: str
    start_s: float
    end_s: float
    text: str
    speaker_id: str | None = None
    dnsmos: float | None = None
    wer: float | None = None
    speech_ratio: float | None = None
    keep: bool | None = None
    tags: Mapping[str, str] = field(default_factory=dict)
    extras: Mapping[str, Any] = field(default_factory=dict)

    def validate(self) -> "Segment":
        if not self.segment_id or not self.asset_id:
            raise ManifestError("segment_id and asset_id must be non-empty")
        start = _require_finite("start_s", self.start_s)
        end = _require_finite("end_s", self.end_s)
        if start < 0:
            raise ManifestError(f"start_s must be >= 0, got {start}")
        if start >= end:
            raise ManifestError(
                f"start_s must be < end_s, got [{start}, {end}] "
                f"for {self.segment_id}"
            )
        if self.dnsmos is not None:
            value = _require_finite("dnsmos", self.dnsmos)
            if not 1.0 <= value <= 5.0:
                raise ManifestError(
                    f"dnsmos must be in [1, 5], got {value} "
                    f"for {self.segment_id}"
                )
        if self.wer is not None and _require_finite("wer", self.wer) < 0:
            raise ManifestError(
                f"wer must be >= 0, got {self.wer} for {self.segment_id}"
            )
        if self.speech_ratio is not None:
            value = _require_finite("speech_ratio", self.speech_ratio)
            if not 0.0 <= value <= 1.0:
                raise ManifestError(
                    f"speech_ratio must be in [0, 1], got {value} "
                    f"for {self.segment_id}"
                )
        return self

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    def rounded(self) -> "Segment":
        """Copy with times at ms precision and scores at 6 decimals."""
        updates: dict[str, Any] = {
            "start_s": _round_time(self.start_s),
            "end_s": _round_time(self.end_s),
        }
        for name in ("dnsmos", "wer", "speech_ratio"):
            value = getattr(self, name)
            if value is not None:
                updates[name] = _round_score(value)
        return replace(self, **updates)

    def to_record(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "segment_id": self.segment_id,
            "asset_id": self.asset_id,
            "start_s": self.start_s,
            "end_s": self.end_s,
            "text": self.text,
        }
        for name in _SEGMENT_OPTIONAL:
            value = getattr(self, name)
            if value is not None:
                record[name] = value
        for key in sorted(self.tags):
            record[f"tags.{key}"] = self.tags[key]
        for key in sorted(self.extras):
            record[key] = self.extras[key]
        return record

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "Segment":
        missing = [k for k in _SEGMENT_REQUIRED if k not in record]
        if missing:
            raise ManifestError(f"segment record missing keys: {missing}")
        tags: dict[str, str] = {}
        extras: dict[str, Any] = {}
        known = set(_SEGMENT_REQUIRED) | set(_SEGMENT_OPTIONAL)
        for key, value in record.items():
            if key.startswith("tags."):
                tags[key[len("tags."):]] = str(value)
            elif key not in known:
                extras[key] = value
        return cls(
            segment_id=str(record["segment_id"]),
            asset_id=str(record["asset_id"]),
            start_s=float(record["start_s"]),
            end_s=float(record["end_s"]),
            text=str(record["text"]),
            speaker_id=(
                None if record.get("speaker_id") is None
                else str(record["speaker_id"])
            ),
            dnsmos=(
                None if record.get("dnsmos") is None
                else float(record["dnsmos"])
            ),
            wer=None if record.get("wer") is None else float(record["wer"]),
            speech_ratio=(
                None if record.get("speech_ratio") is None
                else float(record["speech_ratio"])
            ),
            keep=None if record.get("keep") is None else bool(record["keep"]),
            tags=tags,
            extras=extras,
        ).validate()


@dataclass(frozen=True)
class Asset:
    """One source recording the segments point back into."""

    asset_id: str
    uri: str
    duration_s: float
    sample_rate_hz: int
    channels: int
    source_dataset: str
    sub_split: str
    language: str
    license: str
    extras: Mapping[str, Any] = field(default_factory=dict)

    def validate(self) -> "Asset":
        if not self.asset_id or not self.uri:
            raise ManifestError("asset_id and uri must be non-empty")
        duration = _require_finite("duration_s", self.duration_s)
        if duration <= 0:
            raise ManifestError(f"duration_s must be > 0, got {duration}")
        if self.sample_rate_hz <= 0 or self.channels <= 0:
            raise ManifestError("sample_rate_hz and channels must be > 0")
        return self

    def to_record(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "asset_id": self.asset_id,
            "uri": self.uri,
            "duration_s": _round_time(self.duration_s),
            "sample_rate_hz": self.sample_rate_hz,
            "channels": self.channels,
            "source_dataset": self.source_dataset,
            "sub_split": self.sub_split,
            "language": self.language,
            "license": self.license,
        }
        for key in sorted(self.extras):
            record[key] = self.extras[key]
        return record

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "Asset":
        missing = [k for k in _ASSET_REQUIRED if k not in record]
        if missing:
            raise ManifestError(f"asset record missing keys: {missing}")
        extras = {
            key: value
            for key, value in record.items()
            if key not in _ASSET_REQUIRED
        }
        return cls(
            asset_id=str(record["asset_id"]),
            uri=str(record["uri"]),
            duration_s=float(record["duration_s"]),
            sample_rate_hz=int(record["sample_rate_hz"]),
            channels=int(record["channels"]),
            source_dataset=str(record["source_dataset"]),
            sub_split=str(record["sub_split"]),
            language=str(record["language"]),
            license=str(record["license"]),
            extras=extras,
        ).validate()


def dump_line(record: Mapping[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


def parse_line(line: str, lineno: int = 0) -> dict[str, Any]:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"line {lineno}: invalid JSON: {exc}") from exc
    if not isinstance(record, dict):
        raise ManifestError(f"line {lineno}: expected an object")
    return record


def segment_sort_key(segment: Segment) -> tuple[str, float, str]:
    return (segment.asset_id, segment.start_s, segment.segment_id)


def write_segments(segments: Iterable[Segment], path: str | Path) -> int:
    """Validate, round, sort, and write segments; returns the count."""
    rows = sorted(
        (seg.validate().rounded() for seg in segments), key=segment_sort_key
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for seg in rows:
            handle.write(dump_line(seg.to_record()) + "\n")
    return len(rows)


def read_segments(path: str | Path) -> list[Segment]:
    segments = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            segments.append(Segment.from_record(parse_line(line, lineno)))
    return segments


def iter_segments(path: str | Path) -> Iterator[Segment]:
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if line:
                yield Segment.from_record(parse_line(line, lineno))


def write_assets(assets: Iterable[Asset], path: str | Path) -> int:
    rows = sorted((a.validate() for a in assets), key=lambda a: a.asset_id)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for asset in rows:
            handle.write(dump_line(asset.to_record()) + "\n")
    return len(rows)


def read_assets(path: str | Path) -> list[Asset]:
    assets = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            assets.append(Asset.from_record(parse_line(line, lineno)))
    return assets


def merge_segments(shards: Iterable[Iterable[Segment]]) -> list[Segment]:
    """Union of disjoint shard contents; order-independent result.

    Shards must not share segment_ids: a duplicate means two shards claim
    the same segment, which is a partitioning bug, not data to merge.
    """
    seen: dict[str, Segment] = {}
    for shard in shards:
        for segment in shard:
            segment = segment.validate().rounded()
            if segment.segment_id in seen:
                raise ManifestError(
                    f"duplicate segment_id {segment.segment_id!r} "
                    "across shards"
                )
            seen[segment.segment_id] = segment
    return sorted(seen.values(), key=segment_sort_key)


def merge_assets(shards: Iterable[Iterable[Asset]]) -> list[Asset]:
    seen: dict[str, Asset] = {}
    for shard in shards:
        for asset in shard:
            asset = asset.validate()
            previous = seen.get(asset.asset_id)
            if previous is None:
                seen[asset.asset_id] = asset
            elif previous != asset:
                raise ManifestError(
                    f"conflicting records for asset_id {asset.asset_id!r}"
                )
    return sorted(seen.values(), key=lambda a: a.asset_id)


@dataclass(frozen=True)
class DatasetStats:
    """Corpus-level size and quality summary.

    Score means are unweighted per-segment means over the records that
    carry the score; None when no record does.
    """

    segment_count: int
    total_hours: float
    avg_duration_s: float
    mean_dnsmos: float | None = None
    mean_wer: float | None = None
    mean_speech_ratio: float | None = None


def stats_from_totals(segment_count: int, total_hours: float) -> DatasetStats:
    """Summary from already-aggregated totals (e.g. a published table row)."""
    if segment_count < 0 or total_hours < 0:
        raise ValueError("totals must be non-negative")
    if segment_count == 0:
        return DatasetStats(0, 0.0, 0.0)
    return DatasetStats(
        segment_count=segment_count,
        total_hours=float(total_hours),
        avg_duration_s=total_hours * 3600.0 / segment_count,
    )


def compute_dataset_stats(segments: Iterable[Segment]) -> DatasetStats:
    count = 0
    total_s = 0.0
    sums = {"dnsmos": 0.0, "wer": 0.0, "speech_ratio": 0.0}
    counts = {"dnsmos": 0, "wer": 0, "speech_ratio": 0}
    for segment in segments:
        count += 1
        total_s += segment.duration_s
        for name in sums:
            value = getattr(segment, name)
            if value is not None:
                sums[name] += value
                counts[name] += 1

    def mean_of(name: str) -> float | None:
        return sums[name] / counts[name] if counts[name] else None

    base = stats_from_totals(count, total_s / 3600.0)
    return replace(
        base,
        mean_dnsmos=mean_of("dnsmos"),
        mean_wer=mean_of("wer"),
        mean_speech_ratio=mean_of("speech_ratio"),
    )


@dataclass
class DatasetManifest:
    """A named segment collection plus the asset table it points into."""

    name: str
    records: list[Segment]
    assets: dict[str, Asset] = field(default_factory=dict)

    def validate(self) -> "DatasetManifest":
        seen: set[str] = set()
        for record in self.records:
            record.validate()
            if record.segment_id in seen:
                raise ManifestError(
                    f"duplicate segment_id {record.segment_id!r}"
                )
            seen.add(record.segment_id)
            if self.assets:
                asset = self.assets.get(record.asset_id)
                if asset is None:
                    raise ManifestError(
                        f"segment {record.segment_id!r} references unknown "
                        f"asset {record.asset_id!r}"
                    )
                # Half-millisecond slack absorbs the time rounding.
                if record.end_s > asset.duration_s + 5e-4:
                    raise ManifestError(
                        f"segment {record.segment_id!r} ends at "
                        f"{record.end_s}s, past its asset's "
                        f"{asset.duration_s}s"
                    )
        return self

    @property
    def stats(self) -> DatasetStats:
        return compute_dataset_stats(self.records)


def assets_path_for(segments_path: str | Path) -> Path:
    """Companion asset-table path for a segments manifest path."""
    path = Path(segments_path)
    return path.with_name(path.stem + ".assets" + path.suffix)


def read_manifest(path: str | Path, name: str | None = None) -> DatasetManifest:
    path = Path(path)
    records = sorted(read_segments(path), key=segment_sort_key)
    companion = assets_path_for(path)
    assets = (
        {a.asset_id: a for a in read_assets(companion)}
        if companion.exists()
        else {}
    )
    manifest = DatasetManifest(name or path.stem, tuple(records), assets)
    return manifest.validate()


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    manifest.validate()
    write_segments(manifest.records, path)
    if manifest.assets:
        write_assets(manifest.assets.values(), assets_path_for(path))


def merge_shards(shard_paths: Iterable[str | Path]) -> DatasetManifest:
    """Union of disjoint shard manifests read from disk; result order is
    canonical regardless of the order paths are given in."""
    paths = sorted(Path(p) for p in shard_paths)
    records = merge_segments(read_segments(p) for p in paths)
    assets = merge_assets(
        read_assets(assets_path_for(p))
        for p in paths
        if assets_path_for(p).exists()
    )
    return DatasetManifest(
        "merged", tuple(records), {a.asset_id: a for a in assets}
    ).validate()


def stats_by_group(
    segments: Iterable[Segment],
    assets: Mapping[str, Asset] | Iterable[Asset],
    keys: tuple[str, ...] = ("source_dataset", "sub_split"),
) -> dict[tuple[str, ...], DatasetStats]:
    """Per-source summaries, grouped by asset metadata columns."""
    if not isinstance(assets, Mapping):
        assets = {asset.asset_id: asset for asset in assets}
    grouped: dict[tuple[str, ...], list[Segment]] = {}
    for segment in segments:
        asset = assets.get(segment.asset_id)
        if asset is None:
            raise ManifestError(
                f"segment {segment.segment_id!r} references unknown asset "
                f"{segment.asset_id!r}"
            )
        group = tuple(str(getattr(asset, key)) for key in keys)
        grouped.setdefault(group, []).append(segment)
    return {
        group: compute_dataset_stats(members)
        for group, members in sorted(grouped.items())
    }
