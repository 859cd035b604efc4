"""Audio standardization, Opus packaging, and external-stage plumbing.

Everything operates on 16 kHz mono float arrays in [-1, 1]. Opus encode and
decode bind the system libopus directly; there is no muxer dependency, so
stored bytes use a small length-prefixed packet container.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import struct
import zipfile
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .manifest import Asset, Segment

TARGET_SAMPLE_RATE = 16000
# Kaiser beta 8.555 gives roughly a 90 dB stopband for the polyphase filter.
_RESAMPLE_WINDOW = ("kaiser", 8.555)


class DecodeError(ValueError):
    """Input audio could not be decoded."""


class CodecUnavailableError(RuntimeError):
    """The Opus codec library is not available in this environment."""


@dataclass(frozen=True)
class LoudnessSpec:
    target_rms_dbfs: float = -20.0
    peak_ceiling_dbfs: float = -1.0

    def __post_init__(self) -> None:
        if self.peak_ceiling_dbfs > 0:
            raise ValueError("peak ceiling must be <= 0 dBFS")


@dataclass(frozen=True)
class StandardizedAudio:
    samples: np.ndarray
    sample_rate_hz: int
    silent: bool
    gain_db: float
    ceiling_bound: bool


def rms_dbfs(samples: np.ndarray) -> float:
    mean_sq = float(np.mean(np.asarray(samples, dtype=np.float64) ** 2))
    if mean_sq <= 0:
        return float("-inf")
    return 10.0 * np.log10(mean_sq)


def downmix(samples: np.ndarray) -> np.ndarray:
    """Channel-average to mono; accepts (n,) or (n, channels)."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        return samples
    if samples.ndim == 2:
        return samples.mean(axis=1)
    raise DecodeError(f"unsupported array shape {samples.shape}")


def resample(
    samples: np.ndarray, from_hz: int, to_hz: int = TARGET_SAMPLE_RATE
) -> np.ndarray:
    if from_hz <= 0 or to_hz <= 0:
        raise DecodeError("sample rates must be positive")
    if from_hz == to_hz:
        return np.asarray(samples, dtype=np.float64)
    ratio = Fraction(to_hz, from_hz)
    return signal.resample_poly(
        np.asarray(samples, dtype=np.float64),
        ratio.numerator,
        ratio.denominator,
        window=_RESAMPLE_WINDOW,
    )


def standardize_audio(
    samples: np.ndarray,
    sample_rate_hz: int,
    spec: LoudnessSpec = LoudnessSpec(),
) -> StandardizedAudio:
    """Downmix, resample to 16 kHz, and RMS-normalize.

    Gain drives RMS to the target, but never pushes the peak past the
    ceiling: when the ceiling binds, gain is reduced (attenuate-only
    relative to the target, the signal itself may still be amplified).
    All-zero input has no defined gain and is returned unchanged, flagged.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise DecodeError("empty waveform")
    mono = downmix(samples)
    mono = resample(mono, sample_rate_hz, TARGET_SAMPLE_RATE)
    peak = float(np.max(np.abs(mono))) if mono.size else 0.0
    if peak == 0.0:
        return StandardizedAudio(mono, TARGET_SAMPLE_RATE, True, 0.0, False)
    current_rms = rms_dbfs(mono)
    gain = 10.0 ** ((spec.target_rms_dbfs - current_rms) / 20.0)
    ceiling_amp = 10.0 ** (spec.peak_ceiling_dbfs / 20.0)
    ceiling_bound = peak * gain > ceiling_amp
    if ceiling_bound:
        gain = ceiling_amp / peak
    return StandardizedAudio(
        mono * gain,
        TARGET_SAMPLE_RATE,
        False,
        20.0 * np.log10(gain),
        ceiling_bound,
    )


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a WAV file to float64 in [-1, 1]; (n,) or (n, channels)."""
    try:
        rate, data = wavfile.read(str(path))
    except Exception as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    if data.dtype.kind == "i":
        scale = float(np.iinfo(data.dtype).max) + 1.0
        data = data.astype(np.float64) / scale
    elif data.dtype.kind == "u":
        span = float(np.iinfo(data.dtype).max) + 1.0
        data = (data.astype(np.float64) - span / 2.0) / (span / 2.0)
    else:
        data = data.astype(np.float64)
    return data, int(rate)


def write_wav(path: str | Path, samples: np.ndarray, sample_rate_hz: int) -> None:
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    wavfile.write(str(path), sample_rate_hz, clipped.astype(np.float32))


# --- Opus packaging ---------------------------------------------------------

_OPUS_MAGIC = b"VOXOPUS1"
_HEADER = struct.Struct("<8sIHHQH")
_PACKET_LEN = struct.Struct("<H")
_FRAME_SAMPLES = 320  # 20 ms at 16 kHz
_OPUS_APPLICATION_AUDIO = 2049
_OPUS_SET_BITRATE = 4002
_OPUS_GET_LOOKAHEAD = 4027
_BITRATE_BPS = 64000


class _OpusCodec:
    def __init__(self) -> None:
        name = ctypes.util.find_library("opus") or "libopus.so.0"
        try:
            lib = ctypes.CDLL(name)
        except OSError as exc:
            raise CodecUnavailableError(
                "libopus is not installed; Opus packaging is unavailable"
            ) from exc
        lib.opus_encoder_create.restype = ctypes.c_void_p
        lib.opus_encoder_create.argtypes = [
            ctypes.c_int32, ctypes.c_int, ctypes.c_int,
            ctypes.POINTER(ctypes.c_int),
        ]
        lib.opus_encoder_destroy.argtypes = [ctypes.c_void_p]
        lib.opus_decoder_create.restype = ctypes.c_void_p
        lib.opus_decoder_create.argtypes = [
            ctypes.c_int32, ctypes.c_int, ctypes.POINTER(ctypes.c_int),
        ]
        lib.opus_decoder_destroy.argtypes = [ctypes.c_void_p]
        lib.opus_encode_float.restype = ctypes.c_int32
        lib.opus_encode_float.argtypes = [
            ctypes.c_void_p, ctypes.POINTER(ctypes.c_float), ctypes.c_int,
            ctypes.POINTER(ctypes.c_ubyte), ctypes.c_int32,
        ]
        lib.opus_decode_float.restype = ctypes.c_int
        lib.opus_decode_float.argtypes = [
            ctypes.c_void_p, ctypes.POINTER(ctypes.c_ubyte), ctypes.c_int32,
            ctypes.POINTER(ctypes.c_float), ctypes.c_int, ctypes.c_int,
        ]
        self.lib = lib

    def encode(self, samples: np.ndarray) -> tuple[list[bytes], int]:
        err = ctypes.c_int(0)
        encoder = self.lib.opus_encoder_create(
            TARGET_SAMPLE_RATE, 1, _OPUS_APPLICATION_AUDIO, ctypes.byref(err)
        )
        if err.value != 0 or not encoder:
            raise CodecUnavailableError(f"opus encoder init failed ({err.value})")
        try:
            self.lib.opus_encoder_ctl(
                ctypes.c_void_p(encoder),
                ctypes.c_int(_OPUS_SET_BITRATE),
                ctypes.c_int32(_BITRATE_BPS),
            )
            lookahead = ctypes.c_int32(0)
            self.lib.opus_encoder_ctl(
                ctypes.c_void_p(encoder),
                ctypes.c_int(_OPUS_GET_LOOKAHEAD),
                ctypes.byref(lookahead),
            )
            # One extra frame of silence flushes the encoder lookahead.
            pad = (-len(samples)) % _FRAME_SAMPLES + _FRAME_SAMPLES
            padded = np.concatenate(
                [samples.astype(np.float32), np.zeros(pad, dtype=np.float32)]
            )
            out = (ctypes.c_ubyte * 4000)()
            packets = []
            for offset in range(0, len(padded), _FRAME_SAMPLES):
                frame = np.ascontiguousarray(
                    padded[offset:offset + _FRAME_SAMPLES]
                )
                count = self.lib.opus_encode_float(
                    ctypes.c_void_p(encoder),
                    frame.ctypes.data_as(ctypes.POINTER(ctypes.c_float)),
                    _FRAME_SAMPLES,
                    out,
                    len(out),
                )
                if count <= 0:
                    raise CodecUnavailableError(f"opus encode failed ({count})")
                packets.append(bytes(out[:count]))
            return packets, lookahead.value
        finally:
            self.lib.opus_encoder_destroy(ctypes.c_void_p(encoder))

    def decode(self, packets: Iterable[bytes]) -> np.ndarray:
        err = ctypes.c_int(0)
        decoder = self.lib.opus_decoder_create(
            TARGET_SAMPLE_RATE, 1, ctypes.byref(err)
        )
        if err.value != 0 or not decoder:
            raise CodecUnavailableError(f"opus decoder init failed ({err.value})")
        try:
            pcm = (ctypes.c_float * _FRAME_SAMPLES)()
            chunks = []
            for packet in packets:
                buf = (ctypes.c_ubyte * len(packet)).from_buffer_copy(packet)
                count = self.lib.opus_decode_float(
                    ctypes.c_void_p(decoder), buf, len(packet),
                    pcm, _FRAME_SAMPLES, 0,
                )
                if count < 0:
                    raise DecodeError(f"opus decode failed ({count})")
                chunks.append(
                    np.frombuffer(pcm, dtype=np.float32, count=count).copy()
                )
            if not chunks:
                return np.zeros(0, dtype=np.float64)
            return np.concatenate(chunks).astype(np.float64)
        finally:
            self.lib.opus_decoder_destroy(ctypes.c_void_p(decoder))


_CODEC: _OpusCodec | None = None


def _codec() -> _OpusCodec:
    global _CODEC
    if _CODEC is None:
        _CODEC = _OpusCodec()
    return _CODEC


def package_opus(samples: np.ndarray) -> bytes:
    """Encode a 16 kHz mono waveform to Opus at 64 kbps nominal.

    The container records the original sample count and encoder lookahead
    so unpack restores the exact duration.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size == 0:
        raise ValueError("cannot package an empty waveform")
    packets, lookahead = _codec().encode(samples)
    parts = [
        _HEADER.pack(
            _OPUS_MAGIC, TARGET_SAMPLE_RATE, 1, _FRAME_SAMPLES,
            samples.size, lookahead,
        )
    ]
    for packet in packets:
        parts.append(_PACKET_LEN.pack(len(packet)))
        parts.append(packet)
    return b"".join(parts)


def unpack(blob: bytes) -> np.ndarray:
    """Decode bytes from package_opus back to a 16 kHz mono waveform."""
    if len(blob) < _HEADER.size:
        raise DecodeError("opus blob too short")
    magic, rate, channels, frame, n_samples, lookahead = _HEADER.unpack(
        blob[: _HEADER.size]
    )
    if magic != _OPUS_MAGIC or rate != TARGET_SAMPLE_RATE or channels != 1:
        raise DecodeError("unrecognized opus container header")
    packets = []
    offset = _HEADER.size
    while offset < len(blob):
        (length,) = _PACKET_LEN.unpack(blob[offset:offset + _PACKET_LEN.size])
        offset += _PACKET_LEN.size
        packet = blob[offset:offset + length]
        if len(packet) != length:
            raise DecodeError("truncated opus packet")
        packets.append(packet)
        offset += length
    decoded = _codec().decode(packets)
    return decoded[lookahead:lookahead + n_samples]


def write_opus_archive(
    path: str | Path, entries: Mapping[str, bytes]
) -> None:
    """Write segment_id -> opus bytes as a zip with fixed timestamps so
    the archive is byte-deterministic."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        for segment_id in sorted(entries):
            info = zipfile.ZipInfo(
                f"{segment_id}.opus", date_time=(1980, 1, 1, 0, 0, 0)
            )
            archive.writestr(info, entries[segment_id])


def read_opus_archive(path: str | Path) -> dict[str, bytes]:
    with zipfile.ZipFile(path, "r") as archive:
        return {
            name[: -len(".opus")]: archive.read(name)
            for name in archive.namelist()
            if name.endswith(".opus")
        }


# --- Transcription-length mismatch removal ----------------------------------

def length_mismatch_filter(
    records: Sequence[Segment], min_chars_per_s: float = 2.0
) -> tuple[list[Segment], list[Segment]]:
    """Drop segments whose text is implausibly short for their duration."""
    kept, dropped = [], []
    for record in records:
        chars = len("".join(record.text.split()))
        if chars / record.duration_s < min_chars_per_s:
            dropped.append(record)
        else:
            kept.append(record)
    return kept, dropped


# --- External stages ---------------------------------------------------------

@dataclass(frozen=True)
class DiarizationTurn:
    start_s: float
    end_s: float
    speaker_label: str

    def __post_init__(self) -> None:
        if not (self.start_s < self.end_s):
            raise ValueError("turn start must be < end")


@dataclass(frozen=True)
class StageResult:
    stage_name: str
    output_uri: str
    metadata: Mapping[str, str]


class StageAdapter(Protocol):
    """What a scorer-service client must offer the stage runner."""

    def separate(self, audio_ref: str, **options: Any) -> str: ...

    def diarize(
        self, audio_ref: str, duration_s: float, **options: Any
    ) -> list[DiarizationTurn]: ...

    def transcribe(self, audio_ref: str, **options: Any) -> str: ...


STAGE_NAMES = ("separate", "diarize", "transcribe")


def apply_external_stage(
    asset: Asset, stage: str, adapter: StageAdapter
) -> StageResult:
    """Run one neural stage on an asset through the adapter client."""
    if stage not in STAGE_NAMES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGE_NAMES}")
    if stage == "separate":
        output = adapter.separate(asset.uri)
        return StageResult("separate", output, {"asset_id": asset.asset_id})
    if stage == "diarize":
        turns = adapter.diarize(asset.uri, asset.duration_s)
        encoded = ";".join(
            f"{t.start_s:.3f},{t.end_s:.3f},{t.speaker_label}" for t in turns
        )
        return StageResult(
            "diarize", asset.uri,
            {"asset_id": asset.asset_id, "turns": encoded},
        )
    text = adapter.transcribe(asset.uri)
    return StageResult(
        "transcribe", asset.uri, {"asset_id": asset.asset_id, "text": text}
    )
