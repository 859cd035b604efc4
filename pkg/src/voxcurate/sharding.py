"""Deterministic work sharding and crash-safe stage resumption.

Records are routed to shards by hashing their identifier, so shard
membership is stable across runs and machines. Each completed shard
leaves a marker file embedding a digest of its inputs; a rerun skips
shards whose marker digest still matches and recomputes the rest.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence


def stable_shard(identifier: str, shard_count: int) -> int:
    """Map an identifier to a shard index in [0, shard_count)."""
    if shard_count < 1:
        raise ValueError("shard_count must be >= 1")
    digest = hashlib.sha256(identifier.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % shard_count


def partition_ids(identifiers: Iterable[str],
                  shard_count: int) -> list[list[str]]:
    shards: list[list[str]] = [[] for _ in range(shard_count)]
    for identifier in identifiers:
        shards[stable_shard(identifier, shard_count)].append(identifier)
    return shards


def content_digest(*parts: str | bytes) -> str:
    """Digest over the inputs that determine a shard's output."""
    hasher = hashlib.sha256()
    for part in parts:
        data = part.encode("utf-8") if isinstance(part, str) else part
        hasher.update(len(data).to_bytes(8, "big"))
        hasher.update(data)
    return hasher.hexdigest()


def file_digest(path: Path) -> str:
    hasher = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            hasher.update(chunk)
    return hasher.hexdigest()


@dataclass(frozen=True)
class ShardOutcome:
    shard_id: int
    skipped: bool
    attempts: int
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


class StageRunError(RuntimeError):
    """One or more shards failed after exhausting retries."""

    def __init__(self, stage: str, failed: Sequence[ShardOutcome]) -> None:
        ids = ", ".join(str(outcome.shard_id) for outcome in failed)
        super().__init__(f"stage {stage}: shard(s) {ids} failed")
        self.stage = stage
        self.failed = tuple(failed)


class StageState:
    """Per-stage completion markers under a state directory."""

    def __init__(self, state_dir: Path, stage: str) -> None:
        self.state_dir = state_dir
        self.stage = stage
        state_dir.mkdir(parents=True, exist_ok=True)

    def _marker_path(self, shard_id: int) -> Path:
        return self.state_dir / f"{self.stage}.shard{shard_id:04d}.done"

    def is_done(self, shard_id: int, digest: str) -> bool:
        """True when the shard's marker exists and matches digest.

        A digest mismatch means inputs or config changed; the stale
        marker is removed so the shard recomputes.
        """
        path = self._marker_path(shard_id)
        if not path.exists():
            return False
        try:
            recorded = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            path.unlink(missing_ok=True)
            return False
        if recorded.get("digest") != digest:
            path.unlink(missing_ok=True)
            return False
        return True

    def mark_done(self, shard_id: int, digest: str) -> None:
        path = self._marker_path(shard_id)
        payload = json.dumps(
            {"stage": self.stage, "shard": shard_id, "digest": digest},
            sort_keys=True,
        )
        # Write-then-rename so a crash never leaves a corrupt marker.
        temp = path.with_suffix(".tmp")
        temp.write_text(payload + "\n", encoding="utf-8")
        os.replace(temp, path)

    def clear(self) -> None:
        for path in self.state_dir.glob(f"{self.stage}.shard*.done"):
            path.unlink(missing_ok=True)


def run_sharded(
    stage: str,
    state: StageState,
    shard_digests: Sequence[str],
    worker: Callable[[int], None],
    worker_count: int = 1,
    retries: int = 2,
) -> list[ShardOutcome]:
    """Run one stage across shards with resume, retries, and a
    bounded thread pool. Raises StageRunError if any shard fails."""

    def run_one(shard_id: int) -> ShardOutcome:
        digest = shard_digests[shard_id]
        if state.is_done(shard_id, digest):
            return ShardOutcome(shard_id=shard_id, skipped=True, attempts=0)
        last_error = ""
        for attempt in range(1, retries + 2):
            try:
                worker(shard_id)
            except Exception as exc:  # noqa: BLE001 - retried, then surfaced
                last_error = f"{type(exc).__name__}: {exc}"
                continue
            state.mark_done(shard_id, digest)
            return ShardOutcome(
                shard_id=shard_id, skipped=False, attempts=attempt
            )
        return ShardOutcome(
            shard_id=shard_id,
            skipped=False,
            attempts=retries + 1,
            error=last_error,
        )

    outcomes: list[ShardOutcome] = []
    if worker_count <= 1:
        outcomes = [run_one(i) for i in range(len(shard_digests))]
    else:
        with ThreadPoolExecutor(max_workers=worker_count) as pool:
            futures = {
                pool.submit(run_one, i): i
                for i in range(len(shard_digests))
            }
            outcomes = [future.result() for future in as_completed(futures)]
        outcomes.sort(key=lambda outcome: outcome.shard_id)

    failed = [outcome for outcome in outcomes if outcome.failed]
    if failed:
        raise StageRunError(stage, failed)
    return outcomes
