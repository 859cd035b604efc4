"""End-to-end runs over the on-disk layout: every stage, resume after
interruption, config-change invalidation, and byte determinism."""

from __future__ import annotations

import dataclasses
import filecmp
import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from conftest import SAMPLE_RATE, CountingScorer, speech_burst

import voxcurate.pipeline as pipeline
from voxcurate.audio import write_wav
from voxcurate.cli import main
from voxcurate.config import ConfigError, config_from_dict
from voxcurate.pipeline import RunLayout, config_fingerprint, run_stage


def corpus_config(raw_dir: Path, work_dir: Path, **top_level):
    base = {
        "seed": 5,
        "shard_count": 2,
        "retries": 0,
        "paths": {"work_dir": str(work_dir), "audio_dir": str(raw_dir)},
        "adapter": {
            "mode": "stub",
            "transcribe_mode": "echo",
            "dnsmos_mode": "hash",
            "vad_mode": "hash",
        },
        "filter": {"removal_percentile": 25},
    }
    base.update(top_level)
    return config_from_dict(base)


CURATE_STAGES = ("ingest", "segment", "score", "filter", "stats", "report")


def run_curation(config) -> RunLayout:
    for stage in CURATE_STAGES:
        run_stage(stage, config)
    return RunLayout(config.paths.work_dir)


def tree_bytes(work_dir: Path) -> dict[str, bytes]:
    """All run outputs except the log and resume markers."""
    snapshot = {}
    for path in sorted(work_dir.rglob("*")):
        if not path.is_file():
            continue
        relative = path.relative_to(work_dir).as_posix()
        if relative == "run.log" or relative.startswith("state/"):
            continue
        snapshot[relative] = path.read_bytes()
    return snapshot


# --- full curation run -------------------------------------------------------

def test_curation_stages_produce_expected_layout(tiny_corpus, tmp_path):
    config = corpus_config(tiny_corpus, tmp_path / "run")
    layout = run_curation(config)

    for path in (
        layout.assets_path, layout.segments_path, layout.scored_path,
        layout.filtered_path, layout.core_path, layout.audit_path,
        layout.stats_path, layout.log_path,
    ):
        assert path.exists(), path

    assets = [json.loads(line) for line in
              layout.assets_path.read_text().splitlines()]
    assert len(assets) == 4
    assert all((layout.work_dir / a["uri"]).exists() for a in assets)

    segments = layout.segments_path.read_text().splitlines()
    assert len(segments) == 8  # two speech spans per recording

    scored = [json.loads(line) for line in
              layout.scored_path.read_text().splitlines()]
    assert all(row["wer"] == 0.0 for row in scored)  # echo transcription
    assert all(1.0 <= row["dnsmos"] <= 5.0 for row in scored)

    stats = json.loads(layout.stats_path.read_text())
    assert stats["total"]["segment_count"] == 8
    assert "DemoCorpus/clean" in stats["groups"]

    report_names = {p.name for p in layout.report_dir.iterdir()}
    assert {"dataset_statistics.txt", "retention.txt",
            "wer_histogram.svg", "dnsmos_histogram.svg",
            "speech_ratio_histogram.svg"} <= report_names


def test_run_log_holds_the_timestamps(tiny_corpus, tmp_path):
    config = corpus_config(tiny_corpus, tmp_path / "run")
    layout = run_curation(config)
    log_text = layout.log_path.read_text()
    assert "start ingest" in log_text
    assert "done report" in log_text
    # timestamped lines: "YYYY-MM-DD HH:MM:SS,mmm LEVEL ..."
    first = log_text.splitlines()[0]
    assert first[4] == "-" and first[7] == "-"
    # the current date never leaks into any other artifact
    today = first.split(" ")[0].encode()
    for relative, data in tree_bytes(layout.work_dir).items():
        assert today not in data, relative


def test_two_runs_are_byte_identical(tiny_corpus, tmp_path):
    first = run_curation(corpus_config(tiny_corpus, tmp_path / "one"))
    second = run_curation(corpus_config(tiny_corpus, tmp_path / "two"))
    left = tree_bytes(first.work_dir)
    right = tree_bytes(second.work_dir)
    assert left.keys() == right.keys()
    mismatched = [name for name in left if left[name] != right[name]]
    assert mismatched == []


# --- resume and invalidation ---------------------------------------------------

def counting_make_scorer(monkeypatch):
    counter = CountingScorer()
    monkeypatch.setattr(pipeline, "make_scorer", lambda config: counter)
    return counter


def test_completed_score_stage_is_not_recomputed(tiny_corpus, tmp_path,
                                                 monkeypatch):
    config = corpus_config(tiny_corpus, tmp_path / "run")
    for stage in ("ingest", "segment", "score"):
        run_stage(stage, config)

    counter = counting_make_scorer(monkeypatch)
    run_stage("score", config)
    assert counter.total == 0


def test_deleted_marker_recomputes_one_shard(tiny_corpus, tmp_path,
                                             monkeypatch):
    config = corpus_config(tiny_corpus, tmp_path / "run")
    for stage in ("ingest", "segment", "score"):
        run_stage(stage, config)
    layout = RunLayout(config.paths.work_dir)
    before = layout.scored_path.read_bytes()

    # simulate a crash that lost shard 0's marker and output
    (layout.state_dir / "score.shard0000.done").unlink()
    layout.shard_path("score", 0, ".jsonl").unlink()

    counter = counting_make_scorer(monkeypatch)
    run_stage("score", config)
    assert counter.total > 0
    assert layout.scored_path.read_bytes() == before


def test_semantic_config_change_invalidates_scores(tiny_corpus, tmp_path,
                                                   monkeypatch):
    config = corpus_config(tiny_corpus, tmp_path / "run")
    for stage in ("ingest", "segment", "score"):
        run_stage(stage, config)

    counter = counting_make_scorer(monkeypatch)
    reseeded = dataclasses.replace(config, seed=99)
    run_stage("score", reseeded)
    assert counter.total > 0


def test_scheduling_only_change_keeps_markers(tiny_corpus, tmp_path,
                                              monkeypatch):
    config = corpus_config(tiny_corpus, tmp_path / "run")
    for stage in ("ingest", "segment", "score"):
        run_stage(stage, config)

    counter = counting_make_scorer(monkeypatch)
    rescheduled = dataclasses.replace(config, worker_count=4, retries=5)
    run_stage("score", rescheduled)
    assert counter.total == 0


def test_fingerprint_tracks_semantics_only():
    config = config_from_dict({})
    same = dataclasses.replace(config, worker_count=8, retries=0)
    different = dataclasses.replace(config, seed=1)
    assert config_fingerprint(config) == config_fingerprint(same)
    assert config_fingerprint(config) != config_fingerprint(different)


# --- evaluation stages ----------------------------------------------------------

def test_benchmark_and_evaluation_stages(tiny_corpus, tmp_path):
    work_dir = tmp_path / "run"
    datasets_dir = tmp_path / "datasets"
    generations_dir = tmp_path / "generations"
    subjective = tmp_path / "subjective.jsonl"
    config = corpus_config(
        tiny_corpus, work_dir,
        paths={
            "work_dir": str(work_dir),
            "audio_dir": str(tiny_corpus),
            "datasets_dir": str(datasets_dir),
            "generations_dir": str(generations_dir),
            "subjective_file": str(subjective),
        },
        benchmark={"prompts_per_dataset": 3,
                   "use_default_categories": False},
        evaluate={"model_name": "demo-tts"},
    )
    layout = run_curation(config)

    # stage the curated pool as one registry dataset
    datasets_dir.mkdir()
    shutil.copy(layout.core_path, datasets_dir / "CMU-ARCTIC.jsonl")
    shutil.copy(layout.core_path.with_name("core.assets.jsonl"),
                datasets_dir / "CMU-ARCTIC.assets.jsonl")

    run_stage("build-eval", config)
    pairs = [json.loads(line) for line in
             layout.benchmark_path.read_text().splitlines()]
    assert len(pairs) == 3
    assert all(p["category"] == "Clean" for p in pairs)
    assert all(p["source_dataset"] == "CMU-ARCTIC" for p in pairs)
    assert json.loads(layout.benchmark_layout_path.read_text())

    # one synthetic generation per pair
    generations_dir.mkdir()
    for pair in pairs:
        write_wav(generations_dir / f"{pair['pair_id']}.wav",
                  speech_burst(1.0), SAMPLE_RATE)

    run_stage("evaluate", config)
    samples_path = layout.evaluation_dir / "demo-tts_samples.jsonl"
    aggregates_path = layout.evaluation_dir / "demo-tts_aggregates.json"
    samples = [json.loads(line) for line in
               samples_path.read_text().splitlines()]
    wer_rows = [row for row in samples if row["metric"] == "wer"]
    assert len(wer_rows) == 3
    assert all(row["value"] == 0.0 for row in wer_rows)  # echo transcripts
    aggregates = json.loads(aggregates_path.read_text())
    assert set(aggregates) == {"wer", "sim", "dnsmos"}
    assert aggregates["wer"]["overall"] == {"mean": 0.0, "count": 3}

    # subjective ratings: one comparative page, one similarity page
    rows = []
    for index, rating in enumerate((1, -1, 2, 0, 1), start=1):
        rows.append({"kind": "cmos", "page_id": "p1", "item_index": index,
                     "annotator_id": "ann1", "model": "demo-tts",
                     "rating": rating, "order_flag": "a" if index % 2 else "b",
                     "category": "Clean"})
    for index, rating in enumerate((4, 5, 3, 4, 5), start=1):
        rows.append({"kind": "smos", "page_id": "p2", "item_index": index,
                     "annotator_id": "ann1", "model": "demo-tts",
                     "rating": rating, "category": "Clean"})
    subjective.write_text(
        "".join(json.dumps(row) + "\n" for row in rows), encoding="utf-8"
    )
    run_stage("aggregate-mos", config)
    mos = json.loads(layout.mos_path.read_text())
    assert set(mos) == {"cmos", "smos"}
    assert mos["smos"]["demo-tts/Clean"]["count"] == 5

    # the final report now includes the evaluation table
    run_stage("report", config)
    evaluation_table = (layout.report_dir / "evaluation.txt").read_text()
    assert "demo-tts" in evaluation_table
    assert "Overall" in evaluation_table


@pytest.mark.parametrize("stage, predecessor", [
    ("segment", "ingest"),
    ("score", "segment"),
    ("filter", "score"),
    ("stats", "segment"),
    ("report", "score"),
])
def test_stages_name_their_missing_predecessor(tiny_corpus, tmp_path,
                                               stage, predecessor):
    config = corpus_config(tiny_corpus, tmp_path / "run")
    with pytest.raises(ConfigError, match=f"run {predecessor} first"):
        run_stage(stage, config)


def test_build_eval_requires_datasets_dir(tiny_corpus, tmp_path):
    config = corpus_config(tiny_corpus, tmp_path / "run")
    with pytest.raises(ConfigError):
        run_stage("build-eval", config)


def test_build_eval_rejects_malformed_manifest(tiny_corpus, tmp_path):
    datasets_dir = tmp_path / "datasets"
    datasets_dir.mkdir()
    (datasets_dir / "broken.jsonl").write_text("{oops\n", encoding="utf-8")
    config = corpus_config(
        tiny_corpus, tmp_path / "run",
        paths={"work_dir": str(tmp_path / "run"),
               "audio_dir": str(tiny_corpus),
               "datasets_dir": str(datasets_dir)},
    )
    with pytest.raises(ConfigError, match="broken.jsonl"):
        run_stage("build-eval", config)


def test_aggregate_mos_rejects_bad_rows_as_config_errors(tiny_corpus, tmp_path):
    work_dir = tmp_path / "run"
    subjective = tmp_path / "subjective.jsonl"
    config = corpus_config(
        tiny_corpus, work_dir,
        paths={"work_dir": str(work_dir), "audio_dir": str(tiny_corpus),
               "subjective_file": str(subjective)},
    )
    row = {"kind": "smos", "page_id": "p", "item_index": 0,
           "annotator_id": "a", "model": "m", "rating": 4}
    subjective.write_text(json.dumps(row) + "\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="item_index"):
        run_stage("aggregate-mos", config)

    subjective.write_text("{not json\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="line 1"):
        run_stage("aggregate-mos", config)

    subjective.write_text('{"kind": "smos"}\n', encoding="utf-8")
    with pytest.raises(ConfigError, match="missing field"):
        run_stage("aggregate-mos", config)


def test_evaluate_requires_generations(tiny_corpus, tmp_path):
    work_dir = tmp_path / "run"
    config = corpus_config(
        tiny_corpus, work_dir,
        paths={"work_dir": str(work_dir), "audio_dir": str(tiny_corpus),
               "generations_dir": str(tmp_path / "missing")},
    )
    with pytest.raises(ConfigError):
        run_stage("evaluate", config)


# --- failure modes ---------------------------------------------------------------

def test_ingest_requires_audio_dir(tmp_path):
    config = config_from_dict(
        {"paths": {"work_dir": str(tmp_path / "run")}}
    )
    with pytest.raises(ConfigError):
        run_stage("ingest", config)


def test_ingest_rejects_empty_audio_dir(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    config = corpus_config(empty, tmp_path / "run")
    with pytest.raises(ConfigError):
        run_stage("ingest", config)


def test_segment_requires_prior_ingest(tiny_corpus, tmp_path):
    config = corpus_config(tiny_corpus, tmp_path / "run")
    with pytest.raises(ConfigError, match="ingest"):
        run_stage("segment", config)


def test_unknown_stage_rejected(tmp_path):
    config = config_from_dict({"paths": {"work_dir": str(tmp_path)}})
    with pytest.raises(ConfigError):
        run_stage("polish", config)


def test_failed_stage_is_logged(tiny_corpus, tmp_path):
    config = corpus_config(tiny_corpus, tmp_path / "run")
    with pytest.raises(ConfigError):
        run_stage("segment", config)
    log_text = RunLayout(config.paths.work_dir).log_path.read_text()
    assert "stage segment failed" in log_text


# --- command line ----------------------------------------------------------------

def write_config(path: Path, raw_dir: Path, work_dir: Path) -> Path:
    path.write_text(
        "retries: 0\n"
        "paths:\n"
        f"  work_dir: {work_dir}\n"
        f"  audio_dir: {raw_dir}\n",
        encoding="utf-8",
    )
    return path


def test_cli_runs_a_stage(tiny_corpus, tmp_path):
    config_path = write_config(
        tmp_path / "config.yaml", tiny_corpus, tmp_path / "run"
    )
    exit_code = main(["ingest", "--config", str(config_path)])
    assert exit_code == 0
    assert (tmp_path / "run" / "assets.jsonl").exists()


def test_cli_reports_config_errors_as_2(tmp_path, capsys):
    config_path = tmp_path / "config.yaml"
    config_path.write_text("shard_cout: 2\n", encoding="utf-8")
    assert main(["ingest", "--config", str(config_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_missing_config_file_is_2(tmp_path, capsys):
    missing = tmp_path / "nope.yaml"
    assert main(["ingest", "--config", str(missing)]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_stage_config_errors_are_2(tmp_path, capsys):
    # valid config file, but segment has no assets to read
    empty = tmp_path / "empty"
    empty.mkdir()
    config_path = write_config(
        tmp_path / "config.yaml", empty, tmp_path / "run"
    )
    assert main(["segment", "--config", str(config_path)]) == 2


def test_cli_failed_shards_exit_1_and_name_shards(tmp_path, capsys):
    raw = tmp_path / "raw"
    raw.mkdir()
    write_wav(raw / "good.wav", speech_burst(4.0), SAMPLE_RATE)
    (raw / "bad.wav").write_bytes(b"not a wav file")
    config_path = write_config(
        tmp_path / "config.yaml", raw, tmp_path / "run"
    )
    assert main(["ingest", "--config", str(config_path)]) == 1
    err = capsys.readouterr().err
    assert "shard" in err
    assert "failed" in err
