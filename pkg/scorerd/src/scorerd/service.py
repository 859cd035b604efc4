"""Request handling for the scorer wire protocol.

The service is stateless: every POST body is a batch of line-delimited
JSON request records, every response one line per request in input
order. Scoring is delegated to the in-process stub backends, so the
service never links an ML runtime; the module identifiers it reports
make deployments auditable when real backends replace the stubs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Any, Mapping

from fastapi import FastAPI, Request, Response
from voxcurate.adapters import (
    ENDPOINTS,
    PROTOCOL_HEADER,
    PROTOCOL_VERSION,
    RESULT_FIELDS,
    StubScorer,
    decode_audio_b64,
    request_options,
    validate_request,
)
from voxcurate.manifest import ManifestError, dump_line, parse_line

# the protocol pins payloads to 16 kHz mono float32
SAMPLE_RATE_HZ = 16000

_TRANSCRIBE_MODES = ("empty", "echo", "fixed")
_DNSMOS_MODES = ("fixed", "hash")
_VAD_MODES = ("full", "hash")


class BadBatchError(ValueError):
    """The batch as a whole cannot be answered (no addressable lines)."""


@dataclass(frozen=True)
class ServiceConfig:
    """Which endpoints to serve and how the stub backends behave."""

    enabled: tuple[str, ...] = ENDPOINTS
    transcribe_mode: str = "empty"
    transcribe_text: str = ""
    dnsmos_mode: str = "fixed"
    dnsmos_value: float = 3.0
    vad_mode: str = "full"
    embed_dim: int = 16
    model_name: str = "stub"
    model_version: str = "0"

    def __post_init__(self) -> None:
        unknown = [name for name in self.enabled if name not in ENDPOINTS]
        if unknown:
            raise ValueError(f"unknown endpoints {unknown}; "
                             f"choose from {list(ENDPOINTS)}")
        if len(set(self.enabled)) != len(self.enabled):
            raise ValueError("enabled endpoints must be unique")
        if self.transcribe_mode not in _TRANSCRIBE_MODES:
            raise ValueError(
                f"transcribe_mode must be one of {_TRANSCRIBE_MODES}"
            )
        if self.dnsmos_mode not in _DNSMOS_MODES:
            raise ValueError(f"dnsmos_mode must be one of {_DNSMOS_MODES}")
        if self.vad_mode not in _VAD_MODES:
            raise ValueError(f"vad_mode must be one of {_VAD_MODES}")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")


@dataclass(frozen=True)
class _AudioPayload:
    """A request's audio resolved to a stable identity plus a time span."""

    ref: str
    start_s: float | None
    end_s: float | None


def _resolve_audio(kind: str, record: Mapping[str, Any]) -> _AudioPayload:
    if kind == "audio_ref":
        start = record.get("start_s")
        end = record.get("end_s")
        return _AudioPayload(
            ref=str(record["audio_ref"]),
            start_s=None if start is None else float(start),
            end_s=None if end is None else float(end),
        )
    samples = decode_audio_b64(str(record["audio_b64"]))
    digest = hashlib.sha256(
        str(record["audio_b64"]).encode("ascii")
    ).hexdigest()[:16]
    return _AudioPayload(
        ref=f"inline:{digest}",
        start_s=0.0,
        end_s=len(samples) / SAMPLE_RATE_HZ,
    )


class StubBackend:
    """Maps wire requests onto the in-process stub scorer."""

    def __init__(self, config: ServiceConfig) -> None:
        self.config = config
        self.scorer = StubScorer(
            transcribe_mode=config.transcribe_mode,
            transcribe_text=config.transcribe_text,
            dnsmos_mode=config.dnsmos_mode,
            dnsmos_value=config.dnsmos_value,
            vad_mode=config.vad_mode,
            embed_dim=config.embed_dim,
            model_name=config.model_name,
            model_version=config.model_version,
        )

    def handle(self, endpoint: str, record: Mapping[str, Any]) -> Any:
        """Score one validated request; returns the JSON-ready result."""
        kind = validate_request(record)
        options = request_options(record)
        if endpoint == "normalize":
            if kind != "text":
                raise ValueError("normalize requires a text payload")
            return self.scorer.normalize(str(record["text"]), **options)
        if kind == "text":
            raise ValueError(f"{endpoint} requires an audio payload")
        audio = _resolve_audio(kind, record)

        if endpoint == "asr":
            return self.scorer.transcribe(
                audio.ref, audio.start_s, audio.end_s, **options
            )
        if endpoint == "dnsmos":
            return self.scorer.dnsmos(
                audio.ref, audio.start_s, audio.end_s, **options
            )
        if endpoint == "vad":
            if audio.end_s is not None:
                start = 0.0 if audio.start_s is None else audio.start_s
                if audio.end_s <= start:  # zero-length audio: no speech
                    return []
            regions = self.scorer.vad(
                audio.ref, audio.start_s, audio.end_s, **options
            )
            return [[start_s, end_s] for start_s, end_s in regions]
        if endpoint == "embed":
            vector = self.scorer.embed(audio.ref, **options)
            return [float(value) for value in vector]
        if endpoint == "separate":
            return self.scorer.separate(audio.ref, **options)
        if endpoint == "diarize":
            if audio.end_s is None:
                raise ValueError(
                    "diarize requires an audio span (start_s/end_s or an "
                    "inline payload)"
                )
            start = 0.0 if audio.start_s is None else audio.start_s
            duration = audio.end_s - start
            if duration <= 0:
                return []
            turns = self.scorer.diarize(audio.ref, duration, **options)
            return [
                [turn.start_s, turn.end_s, turn.speaker_label]
                for turn in turns
            ]
        raise ValueError(f"unknown endpoint {endpoint!r}")


def _parse_batch(body: bytes) -> list[dict[str, Any]]:
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise BadBatchError(f"body is not UTF-8: {exc}") from exc
    records = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = parse_line(line, number)
        except ManifestError as exc:
            raise BadBatchError(str(exc)) from exc
        if not str(record.get("request_id", "")):
            raise BadBatchError(
                f"line {number}: request_id is required on every request"
            )
        records.append(record)
    return records


def _protocol_response(content: str, status_code: int = 200) -> Response:
    return Response(
        content=content,
        status_code=status_code,
        media_type="application/x-ndjson",
        headers={PROTOCOL_HEADER: PROTOCOL_VERSION},
    )


def _error_response(message: str, status_code: int) -> Response:
    return _protocol_response(
        dump_line({"status": "error", "error": message}) + "\n", status_code
    )


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    backend = StubBackend(config)
    app = FastAPI(title="scorerd", version="0.1.0", docs_url=None,
                  redoc_url=None)

    def _version_problem(request: Request) -> Response | None:
        claimed = request.headers.get(PROTOCOL_HEADER)
        if claimed is not None and claimed != PROTOCOL_VERSION:
            return _error_response(
                f"unsupported protocol version {claimed!r}; "
                f"this service speaks {PROTOCOL_VERSION}",
                status_code=400,
            )
        return None

    @app.get("/health")
    async def health(request: Request) -> Response:
        problem = _version_problem(request)
        if problem is not None:
            return problem
        endpoints = {
            name: (
                {
                    "available": True,
                    "model": config.model_name,
                    "model_version": config.model_version,
                }
                if name in config.enabled
                else {"available": False}
            )
            for name in ENDPOINTS
        }
        return _protocol_response(
            dump_line({"status": "ok", "endpoints": endpoints}) + "\n"
        )

    @app.post("/{endpoint}")
    async def score(endpoint: str, request: Request) -> Response:
        problem = _version_problem(request)
        if problem is not None:
            return problem
        if endpoint not in ENDPOINTS:
            return _error_response(
                f"unknown endpoint {endpoint!r}", status_code=404
            )
        if endpoint not in config.enabled:
            return _error_response(
                f"endpoint {endpoint!r} is disabled", status_code=404
            )
        try:
            records = _parse_batch(await request.body())
        except BadBatchError as exc:
            return _error_response(str(exc), status_code=400)
        lines = []
        for record in records:
            request_id = str(record["request_id"])
            try:
                result = backend.handle(endpoint, record)
            except (ValueError, TypeError) as exc:
                lines.append(dump_line({
                    "request_id": request_id,
                    "status": "error",
                    "error": str(exc),
                }))
                continue
            lines.append(dump_line({
                "request_id": request_id,
                "status": "ok",
                RESULT_FIELDS[endpoint]: result,
                "model": config.model_name,
                "model_version": config.model_version,
            }))
        return _protocol_response("".join(line + "\n" for line in lines))

    return app
