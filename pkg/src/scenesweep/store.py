"""Append-only JSONL results store with unique-key enforcement.

One line per (attribute vector, seed, detector) evaluation; the key is
(attribute hash, seed, detector_id), which makes interrupted sweeps
resumable without duplicates.  A manifest JSON next to the store records
the grid, thresholds and backend configuration of the run.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

from .model import AttributeVector, EvalOutcome

Key = tuple[str, int, str]


@dataclass(frozen=True)
class CellResult:
    """One evaluated (cell, seed, detector) record."""

    attributes: AttributeVector
    seed: int
    detector_id: str
    outcome: Optional[EvalOutcome]
    scene_path: Optional[str] = None
    status: str = "ok"          # "ok" | "skipped"
    reason: Optional[str] = None

    def key(self) -> Key:
        return (self.attributes.key(), self.seed, self.detector_id)

    def to_json(self) -> dict:
        return {
            "attr_key": self.attributes.key(),
            "seed": self.seed,
            "detector_id": self.detector_id,
            "status": self.status,
            "outcome": self.outcome.to_json() if self.outcome else None,
            "scene_path": self.scene_path,
            "reason": self.reason,
            "attributes": self.attributes.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CellResult":
        outcome = obj.get("outcome")
        return cls(
            attributes=AttributeVector.from_json(obj["attributes"]),
            seed=int(obj["seed"]),
            detector_id=obj["detector_id"],
            outcome=EvalOutcome.from_json(outcome) if outcome else None,
            scene_path=obj.get("scene_path"),
            status=obj.get("status", "ok"),
            reason=obj.get("reason"),
        )


class ResultsStore:
    """JSONL-backed record ledger; safe for concurrent appends in-process."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: list[dict] = []
        self._by_key: dict[Key, dict] = {}
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                if not line.strip():
                    continue
                obj = json.loads(line)
                self._records.append(obj)
                self._by_key[self._key_of(obj)] = obj

    @staticmethod
    def _key_of(obj: dict) -> Key:
        return (obj["attr_key"], int(obj["seed"]), obj["detector_id"])

    def __len__(self) -> int:
        return len(self._records)

    def has(self, key: Key) -> bool:
        return key in self._by_key

    def lookup(self, key: Key) -> Optional[dict]:
        return self._by_key.get(key)

    def append(self, result: CellResult) -> None:
        obj = result.to_json()
        key = self._key_of(obj)
        with self._lock:
            if key in self._by_key:
                raise ValueError(f"duplicate store key {key}")
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a") as fh:
                fh.write(json.dumps(obj, sort_keys=True) + "\n")
            self._records.append(obj)
            self._by_key[key] = obj

    def records(self) -> list[dict]:
        """Immutable snapshot for aggregation."""
        with self._lock:
            return list(self._records)

    def __iter__(self) -> Iterator[dict]:
        return iter(self.records())

    @property
    def manifest_path(self) -> Path:
        return self.path.with_name(self.path.stem + ".manifest.json")

    def write_manifest(self, manifest: dict) -> Path:
        self.manifest_path.parent.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return self.manifest_path
