"""Append-only persistent cache for reference ladders and backend responses.

Layout: one subdirectory per namespace, each holding an append-only JSONL
segment of raw payload rows plus a sidecar index (``*.index.jsonl``) mapping
keys to row spans and checksums. Because the segment holds the payload rows
verbatim, the ``reference_set`` namespace's segment is byte-compatible with
the ladder release JSONL format.

Writers serialize through an advisory lock file; reads need no lock (the
segment is append-only and the in-memory index is rebuilt at open).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

from filelock import FileLock

SEGMENT_NAME = "segment-000.jsonl"
INDEX_NAME = "segment-000.index.jsonl"
LOCK_NAME = "writer.lock"


class CacheNamespace(str, Enum):
    REFERENCE_SET = "reference_set"
    CONTINUATION_SCORES = "continuation_scores"
    GENERATION = "generation"


class CacheIntegrityError(Exception):
    """Checksum mismatch or conflicting content for an existing key."""


@dataclass(frozen=True)
class CacheKey:
    namespace: CacheNamespace
    digest: str

    @classmethod
    def make(cls, namespace: CacheNamespace, **fields) -> "CacheKey":
        """Content-hash a canonical JSON rendering of the identifying fields."""
        canonical = json.dumps(fields, sort_keys=True, ensure_ascii=False)
        return cls(namespace, hashlib.sha256(canonical.encode("utf-8")).hexdigest())


def _payload_checksum(rows: list[dict]) -> str:
    blob = "\n".join(json.dumps(r, sort_keys=True, ensure_ascii=False) for r in rows)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Cache:
    """Per-directory cache; safe for many readers and one writer per segment."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._index: dict[tuple[str, str], dict] = {}
        self._rows: dict[str, list[dict]] = {}
        for namespace in CacheNamespace:
            self._load_namespace(namespace)

    def _ns_dir(self, namespace: CacheNamespace) -> Path:
        return self.root / namespace.value

    def _load_namespace(self, namespace: CacheNamespace) -> None:
        ns_dir = self._ns_dir(namespace)
        segment = ns_dir / SEGMENT_NAME
        index = ns_dir / INDEX_NAME
        rows: list[dict] = []
        if segment.exists():
            with segment.open(encoding="utf-8") as fh:
                rows = [json.loads(line) for line in fh if line.strip()]
        self._rows[namespace.value] = rows
        if index.exists():
            with index.open(encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    entry = json.loads(line)
                    self._index[(namespace.value, entry["key"])] = entry

    def get(self, key: CacheKey) -> Optional[list[dict]]:
        """Return the payload rows for a key, or None when absent.

        Verifies the stored checksum; corruption raises ``CacheIntegrityError``
        naming the key.
        """
        entry = self._index.get((key.namespace.value, key.digest))
        if entry is None:
            return None
        rows = self._rows[key.namespace.value][
            entry["start"] : entry["start"] + entry["count"]
        ]
        if len(rows) != entry["count"] or _payload_checksum(rows) != entry["sha256"]:
            raise CacheIntegrityError(
                f"corrupt payload for key {key.digest} in {key.namespace.value}"
            )
        return rows

    def put(self, key: CacheKey, rows: list[dict]) -> None:
        """Append a payload; re-putting identical content is a no-op.

        Conflicting content under an existing key raises
        ``CacheIntegrityError`` (last-writer-wins is only allowed for
        identical bytes).
        """
        if not rows:
            raise ValueError("payload must be a non-empty list of rows")
        checksum = _payload_checksum(rows)
        existing = self._index.get((key.namespace.value, key.digest))
        if existing is not None:
            if existing["sha256"] != checksum:
                raise CacheIntegrityError(
                    f"conflicting content for key {key.digest} "
                    f"in {key.namespace.value}"
                )
            return
        ns_dir = self._ns_dir(key.namespace)
        ns_dir.mkdir(parents=True, exist_ok=True)
        with FileLock(str(ns_dir / LOCK_NAME)):
            start = len(self._rows[key.namespace.value])
            with (ns_dir / SEGMENT_NAME).open("a", encoding="utf-8") as fh:
                for row in rows:
                    fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
            entry = {
                "key": key.digest,
                "start": start,
                "count": len(rows),
                "sha256": checksum,
            }
            with (ns_dir / INDEX_NAME).open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        self._rows[key.namespace.value].extend(rows)
        self._index[(key.namespace.value, key.digest)] = entry

    def __contains__(self, key: CacheKey) -> bool:
        return (key.namespace.value, key.digest) in self._index
