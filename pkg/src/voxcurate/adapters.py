"""Scorer-service wire protocol: schema, HTTP client, and stub backends.

All neural models (ASR, DNSMOS, VAD, speaker embedding, source separation,
diarization, the external text normalizer) live behind a line-delimited
HTTP protocol so this package never links an ML runtime. The stub backends
implement the documented no-model behaviors and keep every test hermetic.
"""

from __future__ import annotations

import base64
import hashlib
import itertools
import os
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
import requests

from .audio import DiarizationTurn
from .manifest import dump_line, parse_line
from .text_metrics import normalize_text

PROTOCOL_VERSION = "1"
PROTOCOL_HEADER = "X-Scorer-Protocol-Version"
ENV_ADAPTER_URL = "VOXCURATE_ADAPTER_URL"
ENDPOINTS = ("asr", "dnsmos", "vad", "embed", "separate", "diarize", "normalize")
# The one result field each endpoint's responses carry.
RESULT_FIELDS = {
    "asr": "text",
    "dnsmos": "score",
    "vad": "regions",
    "embed": "embedding",
    "separate": "audio_ref",
    "diarize": "turns",
    "normalize": "normalized",
}
_PAYLOAD_KINDS = ("audio_ref", "audio_b64", "text")


class ScorerError(RuntimeError):
    """Adapter call failed; retryable says whether trying again may help."""

    def __init__(self, message: str, retryable: bool = False,
                 request_id: str | None = None):
        super().__init__(message)
        self.retryable = retryable
        self.request_id = request_id


class ScorerProtocolError(ScorerError):
    """The reply violated the wire contract."""

    def __init__(self, message: str, request_id: str | None = None):
        super().__init__(message, retryable=True, request_id=request_id)


class ScorerUnavailableError(ScorerError):
    """No attempt reached the service at all.

    Distinct from a per-request failure so callers can stop a doomed run
    instead of recording every score as missing.
    """

    def __init__(self, message: str, request_id: str | None = None):
        super().__init__(message, retryable=True, request_id=request_id)


def encode_audio_b64(samples: np.ndarray) -> str:
    data = np.asarray(samples, dtype=np.float32).tobytes()
    return base64.b64encode(data).decode("ascii")


def decode_audio_b64(payload: str) -> np.ndarray:
    try:
        raw = base64.b64decode(payload, validate=True)
    except Exception as exc:
        raise ValueError(f"invalid base64 audio payload: {exc}") from exc
    if len(raw) % 4 != 0:
        raise ValueError("audio payload length is not a whole float32 count")
    return np.frombuffer(raw, dtype=np.float32).astype(np.float64)


def make_request(
    request_id: str,
    audio_ref: str | None = None,
    audio_b64: str | None = None,
    text: str | None = None,
    start_s: float | None = None,
    end_s: float | None = None,
    options: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    record: dict[str, Any] = {"request_id": request_id}
    if audio_ref is not None:
        record["audio_ref"] = audio_ref
        if start_s is not None:
            record["start_s"] = float(start_s)
        if end_s is not None:
            record["end_s"] = float(end_s)
    if audio_b64 is not None:
        record["audio_b64"] = audio_b64
    if text is not None:
        record["text"] = text
    for key, value in (options or {}).items():
        record[f"options.{key}"] = str(value)
    validate_request(record)
    return record


def validate_request(record: Mapping[str, Any]) -> str:
    """Check the shared request invariants; returns the payload kind."""
    if "request_id" not in record or not str(record["request_id"]):
        raise ValueError("request needs a non-empty request_id")
    present = [kind for kind in _PAYLOAD_KINDS if kind in record]
    if len(present) != 1:
        raise ValueError(
            f"request must carry exactly one payload kind, got {present}"
        )
    return present[0]


def request_options(record: Mapping[str, Any]) -> dict[str, str]:
    prefix = "options."
    return {
        key[len(prefix):]: str(value)
        for key, value in record.items()
        if key.startswith(prefix)
    }


def validate_response(endpoint: str, record: Mapping[str, Any]) -> Any:
    """Check a response against the endpoint's contract; returns the
    result value."""
    request_id = record.get("request_id")
    if record.get("status") == "error":
        raise ScorerError(
            str(record.get("error", "remote error")),
            retryable=False,
            request_id=request_id,
        )
    if record.get("status") != "ok":
        raise ScorerProtocolError(
            f"response status {record.get('status')!r}", request_id
        )
    field_name = RESULT_FIELDS[endpoint]
    if field_name not in record:
        raise ScorerProtocolError(
            f"{endpoint} response missing {field_name!r}", request_id
        )
    result = record[field_name]
    if endpoint == "dnsmos":
        result = float(result)
        if not 1.0 <= result <= 5.0:
            raise ScorerProtocolError(
                f"dnsmos {result} outside [1, 5]", request_id
            )
    elif endpoint == "vad":
        result = [(float(s), float(e)) for s, e in result]
        for start, end in result:
            if start >= end:
                raise ScorerProtocolError(
                    f"vad region [{start}, {end}] is empty", request_id
                )
    elif endpoint == "embed":
        result = np.asarray(result, dtype=np.float64)
        if result.ndim != 1 or result.size == 0:
            raise ScorerProtocolError("embedding must be a flat vector",
                                      request_id)
    elif endpoint == "diarize":
        result = [
            DiarizationTurn(float(s), float(e), str(label))
            for s, e, label in result
        ]
    elif endpoint in ("asr", "normalize", "separate"):
        result = str(result)
    return result


class HttpScorerClient:
    """Client for a scorer service speaking the line-delimited protocol.

    The base URL comes from the constructor or the VOXCURATE_ADAPTER_URL
    environment variable, so deployments can repoint a run without
    touching configuration files.
    """

    def __init__(
        self,
        base_url: str | None = None,
        timeout_s: float = 30.0,
        retries: int = 2,
        session: requests.Session | None = None,
    ):
        resolved = base_url or os.environ.get(ENV_ADAPTER_URL)
        if not resolved:
            raise ValueError(
                "no scorer service URL: pass base_url or set "
                f"{ENV_ADAPTER_URL}"
            )
        self.base_url = resolved.rstrip("/")
        self.timeout_s = timeout_s
        self.retries = retries
        self.session = session or requests.Session()
        self._request_counter = itertools.count()

    def _next_request_id(self) -> str:
        return f"req-{next(self._request_counter):08d}"

    def post_batch(
        self, endpoint: str, records: Sequence[Mapping[str, Any]]
    ) -> list[dict[str, Any]]:
        """POST a batch (one line per request) and return response records
        in request order."""
        if endpoint not in ENDPOINTS:
            raise ValueError(f"unknown endpoint {endpoint!r}")
        body = "".join(dump_line(record) + "\n" for record in records)
        url = f"{self.base_url}/{endpoint}"
        headers = {
            PROTOCOL_HEADER: PROTOCOL_VERSION,
            "Content-Type": "application/x-ndjson",
        }
        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                reply = self.session.post(
                    url, data=body.encode("utf-8"), headers=headers,
                    timeout=self.timeout_s,
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if reply.status_code >= 500:
                last_error = ScorerError(
                    f"{endpoint} returned {reply.status_code}", retryable=True
                )
                continue
            if reply.status_code != 200:
                raise ScorerError(
                    f"{endpoint} returned {reply.status_code}: "
                    f"{reply.text[:200]}"
                )
            lines = [
                line for line in reply.text.splitlines() if line.strip()
            ]
            if len(lines) != len(records):
                raise ScorerProtocolError(
                    f"{endpoint}: sent {len(records)} requests, got "
                    f"{len(lines)} response lines"
                )
            replies = [parse_line(line, i + 1) for i, line in enumerate(lines)]
            by_id = {str(r.get("request_id")): r for r in replies}
            ordered = []
            for record in records:
                request_id = str(record["request_id"])
                if request_id not in by_id:
                    raise ScorerProtocolError(
                        f"{endpoint}: no response for {request_id}",
                        request_id,
                    )
                ordered.append(by_id[request_id])
            return ordered
        raise ScorerUnavailableError(
            f"{endpoint} unreachable after {self.retries + 1} attempts: "
            f"{last_error}"
        )

    def _call(
        self,
        endpoint: str,
        audio_ref: str | None = None,
        text: str | None = None,
        start_s: float | None = None,
        end_s: float | None = None,
        **options: Any,
    ) -> Any:
        record = make_request(
            self._next_request_id(),
            audio_ref=audio_ref,
            text=text,
            start_s=start_s,
            end_s=end_s,
            options=options,
        )
        reply = self.post_batch(endpoint, [record])[0]
        return validate_response(endpoint, reply)

    def transcribe(self, audio_ref: str, start_s: float | None = None,
                   end_s: float | None = None, **options: Any) -> str:
        return self._call("asr", audio_ref, None, start_s, end_s, **options)

    def dnsmos(self, audio_ref: str, start_s: float | None = None,
               end_s: float | None = None, **options: Any) -> float:
        return self._call("dnsmos", audio_ref, None, start_s, end_s, **options)

    def vad(self, audio_ref: str, start_s: float | None = None,
            end_s: float | None = None,
            **options: Any) -> list[tuple[float, float]]:
        return self._call("vad", audio_ref, None, start_s, end_s, **options)

    def embed(self, audio_ref: str, **options: Any) -> np.ndarray:
        return self._call("embed", audio_ref, **options)

    def separate(self, audio_ref: str, **options: Any) -> str:
        return self._call("separate", audio_ref, **options)

    def diarize(self, audio_ref: str, duration_s: float,
                **options: Any) -> list[DiarizationTurn]:
        return self._call(
            "diarize", audio_ref, None, 0.0, duration_s, **options
        )

    def normalize(self, text: str, **options: Any) -> str:
        return self._call("normalize", text=text, **options)

    def health(self) -> dict[str, Any]:
        url = f"{self.base_url}/health"
        reply = self.session.get(
            url, headers={PROTOCOL_HEADER: PROTOCOL_VERSION},
            timeout=self.timeout_s,
        )
        if reply.status_code != 200:
            raise ScorerError(f"health returned {reply.status_code}")
        return parse_line(reply.text.strip() or "{}")


def hash_fraction(*parts: Any) -> float:
    """Deterministic pseudo-random fraction in [0, 1) from the parts."""
    material = ":".join(str(part) for part in parts).encode("utf-8")
    digest = hashlib.sha256(material).digest()
    return int.from_bytes(digest[:8], "big") / 2 ** 64


@dataclass
class StubScorer:
    """In-process stand-in for the scorer service.

    Default behaviors are the documented no-model stubs: separation is
    identity, diarization yields one full-length "spk0" turn, and
    transcription returns empty text. The score modes exist so pipelines
    can be exercised end to end with deterministic, varied values:
    transcribe_mode "echo" returns the caller's reference_hint option,
    dnsmos_mode/vad_mode "hash" derive values from the request identity.
    """

    transcribe_mode: str = "empty"  # "empty" | "echo" | "fixed"
    transcribe_text: str = ""
    dnsmos_mode: str = "fixed"  # "fixed" | "hash"
    dnsmos_value: float = 3.0
    vad_mode: str = "full"  # "full" | "hash"
    embed_dim: int = 16
    model_name: str = "stub"
    model_version: str = "0"
    calls: list[tuple[str, str]] = field(default_factory=list)

    def transcribe(self, audio_ref: str, start_s: float | None = None,
                   end_s: float | None = None, **options: Any) -> str:
        self.calls.append(("asr", audio_ref))
        if self.transcribe_mode == "echo":
            return str(options.get("reference_hint", ""))
        if self.transcribe_mode == "fixed":
            return self.transcribe_text
        return ""

    def dnsmos(self, audio_ref: str, start_s: float | None = None,
               end_s: float | None = None, **options: Any) -> float:
        self.calls.append(("dnsmos", audio_ref))
        if self.dnsmos_mode == "hash":
            return 1.0 + 4.0 * hash_fraction("dnsmos", audio_ref, start_s, end_s)
        return self.dnsmos_value

    def vad(self, audio_ref: str, start_s: float | None = None,
            end_s: float | None = None,
            **options: Any) -> list[tuple[float, float]]:
        self.calls.append(("vad", audio_ref))
        start = 0.0 if start_s is None else float(start_s)
        end = start + 1.0 if end_s is None else float(end_s)
        if self.vad_mode == "hash":
            # Cover a deterministic fraction in [0.5, 1.0) of the span,
            # anchored at the start.
            fraction = 0.5 + 0.5 * hash_fraction("vad", audio_ref, start_s, end_s)
            return [(start, start + (end - start) * fraction)]
        return [(start, end)]

    def embed(self, audio_ref: str, **options: Any) -> np.ndarray:
        self.calls.append(("embed", audio_ref))
        values = [
            hash_fraction("embed", audio_ref, i) - 0.5
            for i in range(self.embed_dim)
        ]
        vector = np.asarray(values, dtype=np.float64)
        return vector / np.linalg.norm(vector)

    def separate(self, audio_ref: str, **options: Any) -> str:
        self.calls.append(("separate", audio_ref))
        return audio_ref

    def diarize(self, audio_ref: str, duration_s: float,
                **options: Any) -> list[DiarizationTurn]:
        self.calls.append(("diarize", audio_ref))
        return [DiarizationTurn(0.0, float(duration_s), "spk0")]

    def normalize(self, text: str, **options: Any) -> str:
        self.calls.append(("normalize", text))
        return " ".join(normalize_text(text))

    def health(self) -> dict[str, Any]:
        return {
            "status": "ok",
            "endpoints": {
                endpoint: {"available": True, "model": self.model_name,
                           "model_version": self.model_version}
                for endpoint in ENDPOINTS
            },
        }


def resolve_scorer(
    mode: str, base_url: str | None = None, **stub_options: Any
) -> Any:
    """Build the configured scorer: 'stub' for in-process behaviors,
    'http' for a live service (URL from config or environment)."""
    if mode == "stub":
        return StubScorer(**stub_options)
    if mode == "http":
        return HttpScorerClient(base_url=base_url)
    raise ValueError(f"unknown adapter mode {mode!r}")
