"""Text tables, machine rows, and deterministic SVG plots."""

from __future__ import annotations

import pytest
from conftest import make_segment

from voxcurate.evaluation import AggregateTable, CategoryAggregate
from voxcurate.filtering import RetentionReport, RetentionRow
from voxcurate.manifest import DatasetStats
from voxcurate.report import (
    ReportArtifact,
    dataset_statistics_report,
    evaluation_table_report,
    metric_histogram,
    render_table,
    retention_table_report,
    score_histograms,
)


def test_render_table_aligns_columns():
    text = render_table(
        ("Name", "Count"),
        (("alpha", "3"), ("a-longer-name", "12")),
    )
    assert text == (
        "Name           Count\n"
        "-------------  -----\n"
        "alpha          3\n"
        "a-longer-name  12"
    )


def test_render_table_rejects_ragged_rows():
    with pytest.raises(ValueError):
        render_table(("A", "B"), (("only-one",),))


def test_artifact_writes_text_and_rows(tmp_path):
    artifact = ReportArtifact(
        name="demo", text="A\n-\n1", rows=({"a": 1}, {"a": 2})
    )
    paths = artifact.write(tmp_path)
    assert [p.name for p in paths] == ["demo.txt", "demo.jsonl"]
    assert (tmp_path / "demo.txt").read_text(encoding="utf-8") == "A\n-\n1\n"
    assert (tmp_path / "demo.jsonl").read_text(encoding="utf-8") == (
        '{"a": 1}\n{"a": 2}\n'
    )


def test_dataset_statistics_table_shape():
    stats = DatasetStats(
        segment_count=10, total_hours=2.5, avg_duration_s=9.0,
        mean_dnsmos=3.21, mean_wer=0.12, mean_speech_ratio=0.88,
    )
    unscored = DatasetStats(
        segment_count=4, total_hours=1.0, avg_duration_s=9.0
    )
    artifact = dataset_statistics_report(
        {("Demo", "read"): stats, ("Other",): unscored},
        DatasetStats(segment_count=14, total_hours=3.5, avg_duration_s=9.0),
    )
    lines = artifact.text.splitlines()
    assert lines[0].split() == [
        "Dataset", "Sub-split", "Size", "(h)", "Avg", "dur", "(s)",
        "Segments", "DNSMOS", "WER", "SR",
    ]
    assert lines[-1].startswith("Total")
    # unscored metrics render as dashes
    assert "-" in lines[3].split()
    assert artifact.rows[-1]["dataset"] == "Total"
    assert artifact.rows[0]["mean_dnsmos"] == 3.21


def test_retention_table_totals():
    report = RetentionReport(rows=(
        RetentionRow("Demo", "read", 8, 6),
        RetentionRow("Other", "", 4, 3),
    ))
    artifact = retention_table_report(report)
    assert artifact.rows[-1] == {
        "dataset": "Total", "sub_split": "", "pool_count": 12,
        "core_count": 9, "retention_percent": 75.0,
    }
    assert artifact.text.splitlines()[-1].split() == [
        "Total", "12", "9", "75.0"
    ]


def aggregate_table(metric: str, per_category: dict[str, float],
                    overall: float) -> AggregateTable:
    return AggregateTable(
        metric=metric,
        per_category={
            name: CategoryAggregate(mean=value, count=5)
            for name, value in per_category.items()
        },
        overall=CategoryAggregate(mean=overall, count=10),
    )


def test_evaluation_table_layout():
    tables = {
        "beta": {
            "wer": aggregate_table("wer", {"Clean": 0.05, "Noisy": 0.09},
                                   0.07),
            "sim": aggregate_table("sim", {"Clean": 0.61, "Noisy": 0.6},
                                   0.605),
        },
        "alpha": {
            "wer": aggregate_table("wer", {"Clean": 0.02, "Noisy": 0.08},
                                   0.05),
            "sim": aggregate_table("sim", {"Clean": 0.67, "Noisy": 0.64},
                                   0.655),
        },
    }
    artifact = evaluation_table_report(tables, ["Clean", "Noisy"])
    lines = artifact.text.splitlines()
    assert lines[0].split("  ")[0] == "Model"
    assert "Overall WER" in lines[0]
    # models sort alphabetically
    assert lines[2].startswith("alpha")
    assert lines[3].startswith("beta")
    # sim renders 3 decimals, wer 2
    assert "0.655" in lines[2]
    assert "0.05" in lines[2]
    assert artifact.rows[0]["overall_wer"] == 0.05


def test_evaluation_table_missing_category_is_dash():
    tables = {
        "solo": {"wer": aggregate_table("wer", {"Clean": 0.05}, 0.05)},
        "other": {"wer": aggregate_table("wer", {"Clean": 0.06}, 0.06)},
    }
    artifact = evaluation_table_report(tables, ["Clean", "Wild"])
    line = artifact.text.splitlines()[2]
    assert "-" in line.split()
    assert artifact.rows[0]["wild_wer"] is None


def test_evaluation_table_rejects_mismatched_metrics():
    tables = {
        "alpha": {"wer": aggregate_table("wer", {}, 0.05)},
        "beta": {"sim": aggregate_table("sim", {}, 0.6)},
    }
    with pytest.raises(ValueError):
        evaluation_table_report(tables, [])
    with pytest.raises(ValueError):
        evaluation_table_report({}, [])


def test_histogram_svg_bytes_are_deterministic(tmp_path):
    values = [v / 10 for v in range(100)]
    first = metric_histogram(values, "wer", 3.5, tmp_path / "a.svg")
    second = metric_histogram(values, "wer", 3.5, tmp_path / "b.svg")
    assert first.read_bytes() == second.read_bytes()
    text = first.read_text(encoding="utf-8")
    assert "cutoff 3.50" in text
    assert "WER distribution" in text


def test_histogram_without_threshold_has_no_cutoff(tmp_path):
    path = metric_histogram([1.0, 2.0, 3.0], "dnsmos", None,
                            tmp_path / "c.svg")
    assert "cutoff" not in path.read_text(encoding="utf-8")


def test_histogram_rejects_empty_series(tmp_path):
    with pytest.raises(ValueError):
        metric_histogram([], "wer", None, tmp_path / "x.svg")


def test_score_histograms_cover_present_metrics(tmp_path):
    records = [
        make_segment(segment_id=f"a-{i:04d}", start_s=float(i),
                     end_s=float(i) + 5.0, dnsmos=2.0 + i / 10,
                     speech_ratio=0.5 + i / 100)
        for i in range(10)
    ]
    paths = score_histograms(
        records, {"dnsmos": 2.4, "speech_ratio": None}, tmp_path
    )
    names = sorted(p.name for p in paths)
    # wer was never set, so no wer plot
    assert names == ["dnsmos_histogram.svg", "speech_ratio_histogram.svg"]
