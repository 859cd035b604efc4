"""Shared test fixtures: synthetic audio, corpora, and counting stubs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

from voxcurate.adapters import StubScorer
from voxcurate.audio import write_wav
from voxcurate.manifest import Asset, Segment

SAMPLE_RATE = 16000


def speech_burst(duration_s: float, freq_hz: float = 220.0,
                 level_dbfs: float = -20.0) -> np.ndarray:
    """Sine burst at a known RMS level; reads as speech to energy VAD."""
    t = np.arange(int(duration_s * SAMPLE_RATE)) / SAMPLE_RATE
    amplitude = 10 ** (level_dbfs / 20) * np.sqrt(2)
    return amplitude * np.sin(2 * np.pi * freq_hz * t)


def near_silence(duration_s: float, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, 1e-5, int(duration_s * SAMPLE_RATE))


def planted_recording(
    bursts: list[float],
    gaps: list[float],
    rng: np.random.Generator,
    lead_s: float = 0.8,
    freq_hz: float = 220.0,
) -> tuple[np.ndarray, list[tuple[float, float]]]:
    """Concatenate silence/speech spans; returns samples and the true
    speech intervals in seconds."""
    if len(gaps) != len(bursts) - 1:
        raise ValueError("need one gap between consecutive bursts")
    parts = [near_silence(lead_s, rng)]
    truth = []
    cursor = lead_s
    for index, burst in enumerate(bursts):
        parts.append(speech_burst(burst, freq_hz + 13 * index))
        truth.append((cursor, cursor + burst))
        cursor += burst
        if index < len(gaps):
            parts.append(near_silence(gaps[index], rng))
            cursor += gaps[index]
    parts.append(near_silence(lead_s, rng))
    return np.concatenate(parts), truth


def make_segment(segment_id: str = "a-0000", asset_id: str = "a",
                 start_s: float = 0.0, end_s: float = 5.0,
                 text: str = "", **overrides) -> Segment:
    return Segment(
        segment_id=segment_id, asset_id=asset_id,
        start_s=start_s, end_s=end_s, text=text, **overrides,
    )


def make_asset(asset_id: str = "a", duration_s: float = 60.0,
               source_dataset: str = "Demo", **overrides) -> Asset:
    defaults = dict(
        uri=f"audio/{asset_id}.wav",
        duration_s=duration_s,
        sample_rate_hz=SAMPLE_RATE,
        channels=1,
        source_dataset=source_dataset,
        sub_split="",
        language="en",
        license="CC BY 4.0",
    )
    defaults.update(overrides)
    return Asset(asset_id=asset_id, **defaults)


@dataclass
class CountingScorer:
    """Stub scorer wrapper that counts adapter calls per method."""

    inner: StubScorer = field(default_factory=lambda: StubScorer(
        transcribe_mode="echo", dnsmos_mode="hash", vad_mode="hash",
    ))
    counts: dict = field(default_factory=dict)

    def _bump(self, name: str) -> None:
        self.counts[name] = self.counts.get(name, 0) + 1

    def transcribe(self, *args, **kwargs):
        self._bump("transcribe")
        return self.inner.transcribe(*args, **kwargs)

    def dnsmos(self, *args, **kwargs):
        self._bump("dnsmos")
        return self.inner.dnsmos(*args, **kwargs)

    def vad(self, *args, **kwargs):
        self._bump("vad")
        return self.inner.vad(*args, **kwargs)

    def embed(self, *args, **kwargs):
        self._bump("embed")
        return self.inner.embed(*args, **kwargs)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@pytest.fixture
def tiny_corpus(tmp_path: Path) -> Path:
    """Four short recordings with transcript and metadata sidecars."""
    raw = tmp_path / "raw"
    raw.mkdir()
    rng = np.random.default_rng(11)
    text = ("the quick brown fox jumps over the lazy dog "
            "near the river bank ") * 3
    for index in range(4):
        bursts = [4.0 + index, 3.5 + index]
        gaps = [1.0]
        samples, _ = planted_recording(bursts, gaps, rng,
                                       freq_hz=200 + 40 * index)
        name = f"rec{index:02d}"
        write_wav(raw / f"{name}.wav", samples, SAMPLE_RATE)
        (raw / f"{name}.txt").write_text(text, encoding="utf-8")
        meta = {
            "source_dataset": "DemoCorpus" if index < 2 else "OtherCorpus",
            "sub_split": "clean",
            "license": "CC BY 4.0",
            "speaker_id": f"spk{index}",
        }
        (raw / f"{name}.json").write_text(json.dumps(meta), encoding="utf-8")
    return raw
