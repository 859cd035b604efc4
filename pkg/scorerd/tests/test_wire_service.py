"""Endpoint behavior, error handling, and client interoperability."""

import numpy as np
import pytest
from fastapi.testclient import TestClient
from voxcurate.adapters import (
    ENDPOINTS,
    PROTOCOL_HEADER,
    PROTOCOL_VERSION,
    HttpScorerClient,
    encode_audio_b64,
    make_request,
    validate_response,
)
from voxcurate.manifest import dump_line, parse_line
from voxcurate.text_metrics import normalize_text

from scorerd.service import ServiceConfig, create_app

HEADERS = {
    PROTOCOL_HEADER: PROTOCOL_VERSION,
    "Content-Type": "application/x-ndjson",
}


def post_lines(client: TestClient, endpoint: str, records) -> list[dict]:
    body = "".join(dump_line(r) + "\n" for r in records)
    reply = client.post(f"/{endpoint}", content=body.encode("utf-8"),
                        headers=HEADERS)
    assert reply.status_code == 200, reply.text
    assert reply.headers[PROTOCOL_HEADER] == PROTOCOL_VERSION
    lines = [line for line in reply.text.splitlines() if line.strip()]
    assert len(lines) == len(records)
    return [parse_line(line, i + 1) for i, line in enumerate(lines)]


@pytest.fixture()
def client() -> TestClient:
    return TestClient(create_app(ServiceConfig(
        transcribe_mode="echo", dnsmos_mode="hash", vad_mode="hash",
    )))


def test_config_rejects_unknown_endpoint():
    with pytest.raises(ValueError, match="unknown endpoints"):
        ServiceConfig(enabled=("asr", "mos"))


def test_config_rejects_bad_modes():
    with pytest.raises(ValueError, match="transcribe_mode"):
        ServiceConfig(transcribe_mode="shout")
    with pytest.raises(ValueError, match="dnsmos_mode"):
        ServiceConfig(dnsmos_mode="random")
    with pytest.raises(ValueError, match="vad_mode"):
        ServiceConfig(vad_mode="never")
    with pytest.raises(ValueError, match="embed_dim"):
        ServiceConfig(embed_dim=0)


def test_asr_echoes_reference_hint(client):
    record = make_request("r1", audio_ref="audio/a.wav", start_s=0.0,
                          end_s=4.0, options={"reference_hint": "hello there"})
    reply = post_lines(client, "asr", [record])[0]
    assert validate_response("asr", reply) == "hello there"
    assert reply["model"] == "stub"
    assert reply["model_version"] == "0"


def test_dnsmos_scores_in_range(client):
    records = [
        make_request(f"r{i}", audio_ref=f"audio/{i}.wav", start_s=0.0,
                     end_s=5.0)
        for i in range(8)
    ]
    replies = post_lines(client, "dnsmos", records)
    values = [validate_response("dnsmos", r) for r in replies]
    assert all(1.0 <= v <= 5.0 for v in values)
    assert len(set(values)) > 1  # hash mode varies across refs


def test_vad_regions_stay_inside_span(client):
    record = make_request("r1", audio_ref="audio/a.wav", start_s=2.0,
                          end_s=9.0)
    regions = validate_response("vad", post_lines(client, "vad", [record])[0])
    assert regions
    for start, end in regions:
        assert 2.0 <= start < end <= 9.0


def test_vad_on_zero_length_audio_is_empty(client):
    record = make_request("r1", audio_b64=encode_audio_b64(np.zeros(0)))
    reply = post_lines(client, "vad", [record])[0]
    assert validate_response("vad", reply) == []


def test_embed_is_deterministic_and_unit_norm(client):
    record = make_request("r1", audio_ref="audio/a.wav")
    first = validate_response("embed",
                              post_lines(client, "embed", [record])[0])
    second = validate_response("embed",
                               post_lines(client, "embed", [record])[0])
    assert first.shape == (16,)
    assert np.array_equal(first, second)
    assert abs(np.linalg.norm(first) - 1.0) < 1e-9


def test_separate_is_identity_on_references(client):
    record = make_request("r1", audio_ref="audio/a.wav")
    reply = post_lines(client, "separate", [record])[0]
    assert validate_response("separate", reply) == "audio/a.wav"


def test_diarize_covers_the_span(client):
    record = make_request("r1", audio_ref="audio/a.wav", start_s=0.0,
                          end_s=12.5)
    turns = validate_response("diarize",
                              post_lines(client, "diarize", [record])[0])
    assert [(t.start_s, t.end_s, t.speaker_label) for t in turns] == [
        (0.0, 12.5, "spk0")
    ]


def test_diarize_without_span_is_a_request_error(client):
    record = make_request("r1", audio_ref="audio/a.wav")
    reply = post_lines(client, "diarize", [record])[0]
    assert reply["status"] == "error"
    assert "span" in reply["error"]
    assert reply["request_id"] == "r1"


def test_normalize_matches_builtin(client):
    record = make_request("r1", text="Twenty-one.")
    reply = post_lines(client, "normalize", [record])[0]
    assert validate_response("normalize", reply) == "21"
    assert " ".join(normalize_text("Twenty-one.")) == "21"


def test_normalize_rejects_audio_payload(client):
    record = make_request("r1", audio_ref="audio/a.wav")
    reply = post_lines(client, "normalize", [record])[0]
    assert reply["status"] == "error"
    assert "text payload" in reply["error"]


def test_audio_endpoint_rejects_text_payload(client):
    record = make_request("r1", text="some words")
    reply = post_lines(client, "dnsmos", [record])[0]
    assert reply["status"] == "error"
    assert "audio payload" in reply["error"]


def test_inline_audio_is_scored(client):
    rng = np.random.default_rng(3)
    payload = encode_audio_b64(rng.normal(size=16000).astype(np.float32))
    record = make_request("r1", audio_b64=payload)
    value = validate_response("dnsmos",
                              post_lines(client, "dnsmos", [record])[0])
    assert 1.0 <= value <= 5.0
    regions = validate_response("vad", post_lines(client, "vad", [record])[0])
    for start, end in regions:
        assert 0.0 <= start < end <= 1.0  # one second of samples


def test_bad_base64_is_a_request_error(client):
    body = dump_line({"request_id": "r1", "audio_b64": "!!!"}) + "\n"
    reply = client.post("/dnsmos", content=body.encode("utf-8"),
                        headers=HEADERS)
    assert reply.status_code == 200
    record = parse_line(reply.text.strip())
    assert record["status"] == "error"
    assert record["request_id"] == "r1"


def test_error_lines_keep_batch_positions(client):
    records = [
        make_request("good-1", audio_ref="audio/a.wav", start_s=0.0,
                     end_s=3.0),
        make_request("bad-2", text="words"),
        make_request("good-3", audio_ref="audio/b.wav", start_s=0.0,
                     end_s=3.0),
    ]
    replies = post_lines(client, "dnsmos", records)
    assert [r["request_id"] for r in replies] == ["good-1", "bad-2", "good-3"]
    assert [r["status"] for r in replies] == ["ok", "error", "ok"]


def test_malformed_json_line_fails_the_batch(client):
    reply = client.post("/asr", content=b"{not json}\n", headers=HEADERS)
    assert reply.status_code == 400
    assert "invalid JSON" in reply.text


def test_missing_request_id_fails_the_batch(client):
    body = dump_line({"audio_ref": "audio/a.wav"}) + "\n"
    reply = client.post("/asr", content=body.encode("utf-8"), headers=HEADERS)
    assert reply.status_code == 400
    assert "request_id" in reply.text


def test_unknown_endpoint_is_404(client):
    reply = client.post("/transcode", content=b"", headers=HEADERS)
    assert reply.status_code == 404


def test_wrong_protocol_version_is_rejected(client):
    headers = dict(HEADERS)
    headers[PROTOCOL_HEADER] = "99"
    reply = client.post("/asr", content=b"", headers=headers)
    assert reply.status_code == 400
    assert "protocol version" in reply.text


def test_missing_version_header_is_accepted(client):
    # keeps the service curl-debuggable
    body = dump_line(make_request("r1", text="One.")) + "\n"
    reply = client.post("/normalize", content=body.encode("utf-8"))
    assert reply.status_code == 200


def test_empty_batch_yields_empty_response(client):
    reply = client.post("/asr", content=b"", headers=HEADERS)
    assert reply.status_code == 200
    assert reply.text == ""


class _TestClientSession:
    """Adapts the in-process test client to the requests.Session shape."""

    def __init__(self, test_client: TestClient) -> None:
        self.test_client = test_client

    def post(self, url, data=None, headers=None, timeout=None):
        return self.test_client.post(url, content=data, headers=headers)

    def get(self, url, headers=None, timeout=None):
        return self.test_client.get(url, headers=headers)


def test_primary_client_interoperates(client):
    scorer = HttpScorerClient(
        base_url="http://testserver",
        session=_TestClientSession(client),
    )
    assert scorer.transcribe("audio/a.wav", 0.0, 4.0,
                             reference_hint="over the river") == "over the river"
    assert 1.0 <= scorer.dnsmos("audio/a.wav", 0.0, 4.0) <= 5.0
    regions = scorer.vad("audio/a.wav", 1.0, 7.0)
    assert regions and all(1.0 <= s < e <= 7.0 for s, e in regions)
    vector = scorer.embed("audio/a.wav")
    assert vector.shape == (16,)
    assert scorer.separate("audio/a.wav") == "audio/a.wav"
    turns = scorer.diarize("audio/a.wav", 6.0)
    assert [(t.start_s, t.end_s, t.speaker_label) for t in turns] == [
        (0.0, 6.0, "spk0")
    ]
    assert scorer.normalize("It's twenty-one!") == "it's 21"
    health = scorer.health()
    assert health["status"] == "ok"
    assert set(health["endpoints"]) == set(ENDPOINTS)
