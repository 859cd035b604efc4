"""Voice activity detection and 3-30 s segment emission.

The built-in VAD is a deterministic frame-energy detector so the whole
pipeline runs hermetically; externally computed speech turns can be imported
through ``import_external_vad`` and flow through the same segmentation and
speech-ratio math.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .manifest import Segment

SILENCE_FLOOR_DB = -200.0


@dataclass(frozen=True)
class SpeechRegion:
    start_s: float
    end_s: float

    def __post_init__(self) -> None:
        if not (self.start_s < self.end_s):
            raise ValueError(
                f"region start must be < end, got [{self.start_s}, "
                f"{self.end_s}]"
            )

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class SegmenterConfig:
    min_segment_s: float = 3.0
    max_segment_s: float = 30.0
    merge_gap_s: float = 0.5
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    hangover_ms: float = 200.0
    min_region_ms: float = 250.0
    energy_margin_db: float = 6.0
    abs_floor_dbfs: float = -45.0

    def __post_init__(self) -> None:
        if not (0 < self.min_segment_s < self.max_segment_s):
            raise ValueError("need 0 < min_segment_s < max_segment_s")
        if self.frame_ms < self.hop_ms:
            raise ValueError("frame_ms must be >= hop_ms")


def _frame_energies_db(samples: np.ndarray, frame: int, hop: int) -> np.ndarray:
    """Per-frame RMS in dBFS; silent frames get a finite floor so
    percentile arithmetic stays well defined."""
    n_frames = 1 + (len(samples) - frame) // hop
    squared = np.concatenate([[0.0], np.cumsum(samples.astype(np.float64) ** 2)])
    starts = np.arange(n_frames) * hop
    mean_sq = (squared[starts + frame] - squared[starts]) / frame
    db = np.full(n_frames, SILENCE_FLOOR_DB)
    positive = mean_sq > 0
    db[positive] = 10.0 * np.log10(mean_sq[positive])
    return db


def detect_speech_regions(
    samples: np.ndarray,
    sample_rate_hz: int = 16000,
    config: SegmenterConfig = SegmenterConfig(),
) -> list[SpeechRegion]:
    """Energy VAD over 25 ms frames at a 10 ms hop.

    A frame is speech when its energy clears the detection threshold
    derived from the 10th-percentile frame energy plus a margin. The
    noise-floor estimate is clamped at the absolute floor before the
    margin is added; otherwise a file that is all speech would estimate
    its "noise" at speech level and detect nothing.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    frame = int(round(config.frame_ms * sample_rate_hz / 1000.0))
    hop = int(round(config.hop_ms * sample_rate_hz / 1000.0))
    if len(samples) < frame:
        return []
    energies = _frame_energies_db(samples, frame, hop)
    noise_floor = float(np.percentile(energies, 10))
    threshold = max(
        min(noise_floor, config.abs_floor_dbfs) + config.energy_margin_db,
        config.abs_floor_dbfs,
    )
    speech = energies > threshold

    duration_s = len(samples) / sample_rate_hz
    frame_s = frame / sample_rate_hz
    hop_s = hop / sample_rate_hz
    hangover_s = config.hangover_ms / 1000.0

    regions: list[tuple[float, float]] = []
    run_start: int | None = None
    for i, flag in enumerate(np.append(speech, False)):
        if flag and run_start is None:
            run_start = i
        elif not flag and run_start is not None:
            start = run_start * hop_s
            end = min((i - 1) * hop_s + frame_s + hangover_s, duration_s)
            regions.append((start, end))
            run_start = None

    merged: list[tuple[float, float]] = []
    for start, end in regions:
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    min_region_s = config.min_region_ms / 1000.0
    return [
        SpeechRegion(start, end)
        for start, end in merged
        if end - start >= min_region_s
    ]


def import_external_vad(
    turns: Iterable[tuple[float, float]]
) -> list[SpeechRegion]:
    """Adopt externally computed speech turns: sort and merge overlaps."""
    pairs = []
    for start, end in turns:
        start, end = float(start), float(end)
        if not (np.isfinite(start) and np.isfinite(end)) or start >= end:
            raise ValueError(f"invalid speech turn [{start}, {end}]")
        pairs.append((start, end))
    pairs.sort()
    merged: list[tuple[float, float]] = []
    for start, end in pairs:
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return [SpeechRegion(start, end) for start, end in merged]


@dataclass(frozen=True)
class _MergedSpan:
    start_s: float
    end_s: float
    # Silence gaps swallowed by the merge, kept as candidate cut points.
    gaps: tuple[tuple[float, float], ...] = field(default_factory=tuple)


def _merge_regions(
    regions: Sequence[SpeechRegion], merge_gap_s: float
) -> list[_MergedSpan]:
    spans: list[_MergedSpan] = []
    for region in sorted(regions, key=lambda r: (r.start_s, r.end_s)):
        if spans and region.start_s - spans[-1].end_s < merge_gap_s:
            last = spans[-1]
            gaps = last.gaps
            if region.start_s > last.end_s:
                gaps = gaps + ((last.end_s, region.start_s),)
            spans[-1] = _MergedSpan(
                last.start_s, max(last.end_s, region.end_s), gaps
            )
        else:
            spans.append(_MergedSpan(region.start_s, region.end_s))
    return spans


def _split_span(span: _MergedSpan, max_s: float) -> list[tuple[float, float]]:
    if span.end_s - span.start_s <= max_s:
        return [(span.start_s, span.end_s)]
    if span.gaps:
        # Cut at the longest swallowed silence; earliest wins ties.
        cut = max(span.gaps, key=lambda g: (g[1] - g[0], -g[0]))
        left_gaps = tuple(g for g in span.gaps if g[1] <= cut[0])
        right_gaps = tuple(g for g in span.gaps if g[0] >= cut[1])
        left = _MergedSpan(span.start_s, cut[0], left_gaps)
        right = _MergedSpan(cut[1], span.end_s, right_gaps)
        pieces: list[tuple[float, float]] = []
        if left.end_s > left.start_s:
            pieces.extend(_split_span(left, max_s))
        if right.end_s > right.start_s:
            pieces.extend(_split_span(right, max_s))
        return pieces
    edges = np.arange(span.start_s, span.end_s, max_s).tolist() + [span.end_s]
    return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]


def segments_from_regions(
    regions: Sequence[SpeechRegion],
    config: SegmenterConfig = SegmenterConfig(),
    asset_id: str = "asset",
) -> list[Segment]:
    """Emit duration-bounded segments from speech regions.

    Nearby regions (gap < merge_gap_s) merge; over-long spans split at the
    longest swallowed silence, recursively, falling back to fixed cuts at
    max_segment_s when no silence is available; pieces under min_segment_s
    are dropped rather than merged forward.
    """
    pieces: list[tuple[float, float]] = []
    for span in _merge_regions(regions, config.merge_gap_s):
        pieces.extend(_split_span(span, config.max_segment_s))
    pieces = [
        (start, end)
        for start, end in pieces
        if end - start >= config.min_segment_s
    ]
    pieces.sort()
    return [
        Segment(
            segment_id=f"{asset_id}-{index:04d}",
            asset_id=asset_id,
            start_s=start,
            end_s=end,
            text="",
        )
        for index, (start, end) in enumerate(pieces)
    ]


def overlap_seconds(
    start_s: float, end_s: float, regions: Sequence[SpeechRegion]
) -> float:
    total = 0.0
    for region in regions:
        lo = max(start_s, region.start_s)
        hi = min(end_s, region.end_s)
        if hi > lo:
            total += hi - lo
    return total


def speech_ratio(segment: Segment, regions: Sequence[SpeechRegion]) -> float:
    """Fraction of the segment covered by speech regions, in [0, 1]."""
    duration = segment.end_s - segment.start_s
    if duration <= 0:
        return 0.0
    ratio = overlap_seconds(segment.start_s, segment.end_s, regions) / duration
    return min(max(ratio, 0.0), 1.0)
