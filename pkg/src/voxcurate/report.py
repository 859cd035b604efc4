"""Run reports: aligned text tables, machine-readable rows, and
per-metric distribution plots with the active cutoff marked.

All outputs are deterministic. Plots are standalone SVG files with
the renderer's hash salt pinned and the creation date stripped, so
identical inputs produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

from matplotlib import pyplot as plt  # noqa: E402 - backend must be set first

from .evaluation import AggregateTable
from .filtering import RetentionReport
from .manifest import DatasetStats

_SVG_HASH_SALT = "voxcurate"
_HISTOGRAM_BINS = 40

_METRIC_TITLES = {
    "dnsmos": "DNSMOS",
    "speech_ratio": "Speech Ratio",
    "wer": "WER",
}


def render_table(headers: Sequence[str],
                 rows: Sequence[Sequence[str]]) -> str:
    """Column-aligned plain-text table with a header rule."""
    widths = [len(header) for header in headers]
    for row in rows:
        if len(row) != len(headers):
            raise ValueError("row width does not match header width")
        for index, cell in enumerate(row):
            widths[index] = max(widths[index], len(cell))

    def line(cells: Sequence[str]) -> str:
        return "  ".join(
            cell.ljust(widths[index]) for index, cell in enumerate(cells)
        ).rstrip()

    rule = "  ".join("-" * width for width in widths)
    return "\n".join([line(headers), rule, *(line(row) for row in rows)])


def _fmt(value: float | None, decimals: int) -> str:
    if value is None:
        return "-"
    return f"{value:.{decimals}f}"


@dataclass(frozen=True)
class ReportArtifact:
    name: str
    text: str
    rows: tuple[dict, ...]

    def machine_lines(self) -> str:
        return "".join(
            json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n"
            for row in self.rows
        )

    def write(self, directory: Path) -> list[Path]:
        directory.mkdir(parents=True, exist_ok=True)
        text_path = directory / f"{self.name}.txt"
        rows_path = directory / f"{self.name}.jsonl"
        text_path.write_text(self.text + "\n", encoding="utf-8")
        rows_path.write_text(self.machine_lines(), encoding="utf-8")
        return [text_path, rows_path]


def dataset_statistics_report(
    grouped: Mapping[tuple[str, ...], DatasetStats],
    totals: DatasetStats,
) -> ReportArtifact:
    """Per-source size and quality table with a totals row."""
    headers = (
        "Dataset",
        "Sub-split",
        "Size (h)",
        "Avg dur (s)",
        "Segments",
        "DNSMOS",
        "WER",
        "SR",
    )
    rows: list[Sequence[str]] = []
    machine: list[dict] = []
    for group, stats in grouped.items():
        dataset = group[0] if group else ""
        sub_split = group[1] if len(group) > 1 else ""
        rows.append(
            (
                dataset,
                sub_split,
                _fmt(stats.total_hours, 1),
                _fmt(stats.avg_duration_s, 1),
                str(stats.segment_count),
                _fmt(stats.mean_dnsmos, 2),
                _fmt(stats.mean_wer, 2),
                _fmt(stats.mean_speech_ratio, 2),
            )
        )
        machine.append(
            {
                "dataset": dataset,
                "sub_split": sub_split,
                "total_hours": round(stats.total_hours, 6),
                "avg_duration_s": round(stats.avg_duration_s, 6),
                "segment_count": stats.segment_count,
                "mean_dnsmos": stats.mean_dnsmos,
                "mean_wer": stats.mean_wer,
                "mean_speech_ratio": stats.mean_speech_ratio,
            }
        )
    rows.append(
        (
            "Total",
            "",
            _fmt(totals.total_hours, 1),
            _fmt(totals.avg_duration_s, 1),
            str(totals.segment_count),
            _fmt(totals.mean_dnsmos, 2),
            _fmt(totals.mean_wer, 2),
            _fmt(totals.mean_speech_ratio, 2),
        )
    )
    machine.append(
        {
            "dataset": "Total",
            "sub_split": "",
            "total_hours": round(totals.total_hours, 6),
            "avg_duration_s": round(totals.avg_duration_s, 6),
            "segment_count": totals.segment_count,
            "mean_dnsmos": totals.mean_dnsmos,
            "mean_wer": totals.mean_wer,
            "mean_speech_ratio": totals.mean_speech_ratio,
        }
    )
    return ReportArtifact(
        name="dataset_statistics",
        text=render_table(headers, rows),
        rows=tuple(machine),
    )


def retention_table_report(report: RetentionReport) -> ReportArtifact:
    """Per-dataset retained fraction table with a totals row."""
    headers = ("Dataset", "Sub-split", "Pool", "Core", "Retention (%)")
    rows: list[Sequence[str]] = []
    machine: list[dict] = []
    for row in report.rows:
        rows.append(
            (
                row.dataset,
                row.sub_split,
                str(row.pool_count),
                str(row.core_count),
                _fmt(row.retention_percent, 1),
            )
        )
        machine.append(
            {
                "dataset": row.dataset,
                "sub_split": row.sub_split,
                "pool_count": row.pool_count,
                "core_count": row.core_count,
                "retention_percent": round(row.retention_percent, 6),
            }
        )
    totals = report.totals
    rows.append(
        (
            "Total",
            "",
            str(totals.pool_count),
            str(totals.core_count),
            _fmt(totals.retention_percent, 1),
        )
    )
    machine.append(
        {
            "dataset": "Total",
            "sub_split": "",
            "pool_count": totals.pool_count,
            "core_count": totals.core_count,
            "retention_percent": round(totals.retention_percent, 6),
        }
    )
    return ReportArtifact(
        name="retention",
        text=render_table(headers, rows),
        rows=tuple(machine),
    )


def evaluation_table_report(
    tables: Mapping[str, Mapping[str, AggregateTable]],
    categories: Sequence[str],
) -> ReportArtifact:
    """Model rows against per-category metric columns plus overall.

    `tables` maps model name to {metric: AggregateTable}; every model
    must report the same metric set.
    """
    if not tables:
        raise ValueError("no evaluation results to report")
    metric_sets = {tuple(sorted(metrics)) for metrics in tables.values()}
    if len(metric_sets) != 1:
        raise ValueError("models report different metric sets")
    metrics = sorted(next(iter(tables.values())))

    headers = ["Model"]
    for category in list(categories) + ["Overall"]:
        for metric in metrics:
            headers.append(f"{category} {_METRIC_TITLES.get(metric, metric)}")

    rows: list[Sequence[str]] = []
    machine: list[dict] = []
    for model in sorted(tables):
        per_metric = tables[model]
        cells = [model]
        record: dict = {"model": model}
        for category in list(categories) + ["Overall"]:
            for metric in metrics:
                table = per_metric[metric]
                if category == "Overall":
                    aggregate = table.overall
                else:
                    aggregate = table.per_category.get(category)
                value = aggregate.mean if aggregate is not None else None
                count = aggregate.count if aggregate is not None else 0
                decimals = 3 if metric == "sim" else 2
                cells.append(_fmt(value, decimals) if count else "-")
                key = f"{category.lower()}_{metric}"
                record[key] = value if count else None
        rows.append(tuple(cells))
        machine.append(record)
    return ReportArtifact(
        name="evaluation",
        text=render_table(headers, rows),
        rows=tuple(machine),
    )


def metric_histogram(
    values: Iterable[float],
    metric: str,
    threshold: float | None,
    path: Path,
) -> Path:
    """One-metric histogram SVG with the cutoff drawn as a dashed line."""
    data = [float(value) for value in values]
    if not data:
        raise ValueError(f"no values to plot for {metric}")
    plt.rcParams["svg.hashsalt"] = _SVG_HASH_SALT
    figure, axis = plt.subplots(figsize=(5.0, 3.2))
    try:
        axis.hist(data, bins=_HISTOGRAM_BINS, color="#4878a8",
                  edgecolor="white", linewidth=0.3)
        title = _METRIC_TITLES.get(metric, metric)
        axis.set_title(f"{title} distribution")
        axis.set_xlabel(title)
        axis.set_ylabel("Segments")
        if threshold is not None:
            axis.axvline(threshold, color="#b03030", linestyle="--",
                         linewidth=1.2)
            axis.annotate(
                f"cutoff {threshold:.2f}",
                xy=(threshold, 1.0),
                xycoords=("data", "axes fraction"),
                xytext=(4, -12),
                textcoords="offset points",
                color="#b03030",
                fontsize=8,
            )
        figure.tight_layout()
        path.parent.mkdir(parents=True, exist_ok=True)
        figure.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(figure)
    return path


def score_histograms(
    records: Iterable,
    thresholds: Mapping[str, float | None],
    directory: Path,
) -> list[Path]:
    """Histograms for each quality metric present on the records."""
    values: dict[str, list[float]] = {
        metric: [] for metric in _METRIC_TITLES
    }
    for record in records:
        for metric in values:
            value = getattr(record, metric, None)
            if value is not None:
                values[metric].append(float(value))
    paths: list[Path] = []
    for metric, series in values.items():
        if not series:
            continue
        paths.append(
            metric_histogram(
                series,
                metric,
                thresholds.get(metric),
                directory / f"{metric}_histogram.svg",
            )
        )
    return paths
