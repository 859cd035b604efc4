"""Subjective listening-test aggregation: comparative and similarity MOS.

Raters see pages of five items. Pages where one annotator gave all five
items the same rating are treated as inattentive and dropped before any
mean is computed. Comparative ratings arrive on the displayed A/B scale
and are unfolded so positive always favors the model under test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

CMOS_SCALE = (-3, 3)
SMOS_SCALE = (1, 5)
PAGE_SIZE = 5
ORDER_FLAGS = ("a", "b", "")


class SubjectiveValidationError(ValueError):
    """Malformed listening-test data (bad rating, broken page, ...)."""


@dataclass(frozen=True)
class SubjectiveItem:
    page_id: str
    item_index: int  # 1..5 within the page
    annotator_id: str
    model: str
    rating: int
    # Which displayed slot held the model under test ("a" or "b");
    # irrelevant for similarity ratings, where it stays "".
    order_flag: str = ""
    category: str = ""

    def __post_init__(self) -> None:
        if not 1 <= self.item_index <= PAGE_SIZE:
            raise SubjectiveValidationError(
                f"item_index must be 1..{PAGE_SIZE}, got {self.item_index}"
            )
        if self.order_flag not in ORDER_FLAGS:
            raise SubjectiveValidationError(
                f"order_flag must be one of {ORDER_FLAGS}, "
                f"got {self.order_flag!r}"
            )


@dataclass(frozen=True)
class MosAggregate:
    model: str
    category: str
    mean: float
    ci_half_width: float
    count: int

    @property
    def ci_low(self) -> float:
        return self.mean - self.ci_half_width

    @property
    def ci_high(self) -> float:
        return self.mean + self.ci_half_width


def _check_scale(items: Iterable[SubjectiveItem], scale: tuple[int, int]) -> None:
    low, high = scale
    for item in items:
        if not isinstance(item.rating, int) or not low <= item.rating <= high:
            raise SubjectiveValidationError(
                f"rating {item.rating!r} outside [{low}, {high}] on page "
                f"{item.page_id!r}"
            )


def qc_exclude(items: Sequence[SubjectiveItem]) -> list[SubjectiveItem]:
    """Drop every rating from (annotator, page) groups whose five ratings
    are all identical. A group with any other size is malformed."""
    groups: dict[tuple[str, str], list[SubjectiveItem]] = {}
    for item in items:
        groups.setdefault((item.annotator_id, item.page_id), []).append(item)
    kept: list[SubjectiveItem] = []
    for (annotator, page), members in groups.items():
        if len(members) != PAGE_SIZE:
            raise SubjectiveValidationError(
                f"page {page!r} by annotator {annotator!r} has "
                f"{len(members)} items; expected {PAGE_SIZE}"
            )
        ratings = {member.rating for member in members}
        if len(ratings) > 1:
            kept.extend(members)
    kept.sort(key=lambda i: (i.page_id, i.annotator_id, i.item_index))
    return kept


def _mean_ci(values: Sequence[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return mean, 0.0
    variance = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, 1.96 * math.sqrt(variance) / math.sqrt(n)


def _aggregate(
    items: Sequence[SubjectiveItem], values: Sequence[float]
) -> dict[tuple[str, str], MosAggregate]:
    grouped: dict[tuple[str, str], list[float]] = {}
    for item, value in zip(items, values):
        grouped.setdefault((item.model, item.category), []).append(value)
    out = {}
    for (model, category), group_values in sorted(grouped.items()):
        mean, half_width = _mean_ci(group_values)
        out[(model, category)] = MosAggregate(
            model, category, mean, half_width, len(group_values)
        )
    return out


def unfold_comparative_rating(item: SubjectiveItem) -> float:
    """Ratings are recorded as 'Audio B relative to Audio A'. When the
    model under test was displayed as Audio A, a positive rating favors
    the other side, so the sign flips."""
    if item.order_flag == "a":
        return -float(item.rating)
    return float(item.rating)


def aggregate_cmos(
    items: Sequence[SubjectiveItem],
) -> dict[tuple[str, str], MosAggregate]:
    """Comparative MOS per (model, category): QC exclusion, order
    unfolding, then pooled mean over all remaining ratings with a 95%
    normal-approximation CI."""
    _check_scale(items, CMOS_SCALE)
    for item in items:
        if item.order_flag not in ("a", "b"):
            raise SubjectiveValidationError(
                f"comparative item on page {item.page_id!r} needs an 'a' or "
                "'b' order flag"
            )
    kept = qc_exclude(items)
    values = [unfold_comparative_rating(item) for item in kept]
    return _aggregate(kept, values)


def aggregate_smos(
    items: Sequence[SubjectiveItem],
) -> dict[tuple[str, str], MosAggregate]:
    """Similarity MOS per (model, category): QC exclusion then pooled
    mean with a 95% normal-approximation CI."""
    _check_scale(items, SMOS_SCALE)
    kept = qc_exclude(items)
    values = [float(item.rating) for item in kept]
    return _aggregate(kept, values)
