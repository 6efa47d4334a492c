"""The tri-granularity memory bank.

Holds three coexisting representation levels: the verbatim turn store, the
embedded fact index with exact top-K cosine search, and the profile
version history. All three persist together under one store directory:

    entries.jsonl   one MemoryEntry per line
    vectors.bin     magic 'TRIM', version u32, dim u32, count u32,
                    then little-endian float32 rows
    turns.jsonl     one DialogueTurn per line
    profiles.jsonl  one profile version per line
    manifest.json   schema version, config snapshot, prompt round
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .backend import Backend
from .corpus import DialogueCorpus, DialogueTurn
from .errors import (
    DanglingAnchor,
    DimensionMismatch,
    EmptyIndex,
    SchemaVersionMismatch,
    StoreClosed,
    StoreIOError,
    UnknownEntry,
)
from .extraction import MemoryEntry
from .profiles import EntityProfile

SCHEMA_VERSION = 1
VECTOR_MAGIC = b"TRIM"
UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class RetrievalConfig:
    """Knobs for top-K matching and anchor expansion.

    ``top_k`` may exceed the store size; results simply truncate.
    """
    top_k: int = 25
    per_query_k: Optional[int] = None  # defaults to top_k
    anchor_count: int = 5
    profile_count: int = 2
    query_cap: int = 3
    use_search_plan: bool = True

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        per_query = self.per_query_k
        if per_query is not None and not 1 <= per_query <= self.top_k:
            raise ValueError("per_query_k must satisfy 1 <= per_query_k <= top_k")

    @property
    def effective_per_query_k(self) -> int:
        return self.per_query_k if self.per_query_k is not None else self.top_k


def _normalize_restatement(text: str) -> str:
    return " ".join(text.split())


def _entry_to_record(entry: MemoryEntry) -> dict:
    return {
        "entry_id": entry.entry_id,
        "lossless_restatement": entry.lossless_restatement,
        "keywords": sorted(entry.keywords),
        "event_time": entry.event_time,
        "location": entry.location,
        "persons": sorted(entry.persons),
        "entities": sorted(entry.entities),
        "topic": entry.topic,
        "source_dialogue_ids": sorted(entry.source_dialogue_ids),
        "origin_window": entry.origin_window,
    }


def _entry_from_record(rec: dict) -> MemoryEntry:
    return MemoryEntry(
        entry_id=rec["entry_id"],
        lossless_restatement=rec["lossless_restatement"],
        keywords=frozenset(rec["keywords"]),
        event_time=rec["event_time"],
        location=rec["location"],
        persons=frozenset(rec["persons"]),
        entities=frozenset(rec["entities"]),
        topic=rec["topic"],
        source_dialogue_ids=frozenset(rec["source_dialogue_ids"]),
        origin_window=rec["origin_window"],
    )


class MemoryStore:
    """Verbatim turns + embedded fact index + profile history."""

    def __init__(self, turns: Iterable[DialogueTurn] = (), dim: Optional[int] = None):
        self.turns: dict[int, DialogueTurn] = {t.turn_id: t for t in turns}
        self.entries: dict[str, MemoryEntry] = {}
        self.insertion_order: list[str] = []
        self._vectors: list[np.ndarray] = []
        self._row_of: dict[str, int] = {}
        self._by_restatement: dict[str, str] = {}
        self._profile_history: list[EntityProfile] = []
        self._latest_profile: dict[str, EntityProfile] = {}
        self.dim = dim
        self._sealed = False

    @classmethod
    def for_corpus(cls, corpus: DialogueCorpus, **kwargs) -> "MemoryStore":
        return cls(turns=corpus.turns, **kwargs)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def sealed(self) -> bool:
        return self._sealed

    def seal(self) -> None:
        """Finish ingestion; the store becomes read-only."""
        self._sealed = True

    # -- fact index ------------------------------------------------------

    def insert_entries(self, entries: Sequence[MemoryEntry],
                       backend: Backend) -> list[str]:
        """Embed restatements and add entries, deduplicating exact repeats.

        Restatements that are byte-equal after whitespace normalization map
        to the already-stored id instead of creating a new row.
        """
        if self._sealed:
            raise StoreClosed("store is sealed")
        fresh = [e for e in entries
                 if _normalize_restatement(e.lossless_restatement) not in self._by_restatement]
        vectors = None
        if fresh:
            vectors = backend.embed([e.lossless_restatement for e in fresh])
        assigned: list[str] = []
        fresh_row = 0
        for entry in entries:
            key = _normalize_restatement(entry.lossless_restatement)
            existing = self._by_restatement.get(key)
            if existing is not None:
                assigned.append(existing)
                continue
            vec = np.asarray(vectors[fresh_row], dtype=np.float32)
            fresh_row += 1
            norm = float(np.linalg.norm(vec))
            if norm == 0:
                raise ValueError("zero-norm embedding")
            vec = vec / norm
            if self.dim is None:
                self.dim = len(vec)
            elif len(vec) != self.dim:
                raise ValueError(f"embedding dim {len(vec)} != index dim {self.dim}")
            entry_id = f"e{len(self.insertion_order) + 1:06d}"
            stored = replace(entry, entry_id=entry_id)
            self.entries[entry_id] = stored
            self.insertion_order.append(entry_id)
            self._row_of[entry_id] = len(self._vectors)
            self._vectors.append(vec)
            self._by_restatement[key] = entry_id
            assigned.append(entry_id)
        return assigned

    def vector_of(self, entry_id: str) -> np.ndarray:
        return self._vectors[self._row_of[entry_id]]

    def similarity_search(self, query_vector: np.ndarray,
                          k: int) -> list[tuple[str, float]]:
        """Exact cosine top-k over the whole index, ties by insertion order."""
        if not self.entries:
            raise EmptyIndex("no entries in store")
        query = np.asarray(query_vector, dtype=np.float32)
        if len(query) != self.dim:
            raise DimensionMismatch(f"query dim {len(query)} != index dim {self.dim}")
        matrix = np.stack(self._vectors)
        scores = matrix @ query
        order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
        k = min(k, len(order))
        return [(self.insertion_order[i], float(scores[i])) for i in order[:k]]

    # -- verbatim recovery ----------------------------------------------

    def recover_dialogue(self, entry_ids: Sequence[str]) -> list[tuple[str, list[DialogueTurn]]]:
        """For each entry, its anchored source turns in turn-id order."""
        out = []
        for entry_id in entry_ids:
            entry = self.entries.get(entry_id)
            if entry is None:
                raise UnknownEntry(entry_id)
            turns = []
            for turn_id in sorted(entry.source_dialogue_ids):
                turn = self.turns.get(turn_id)
                if turn is None:
                    raise DanglingAnchor(
                        f"entry {entry_id} anchors missing turn {turn_id}")
                turns.append(turn)
            out.append((entry_id, turns))
        return out

    # -- profiles --------------------------------------------------------

    def add_profile(self, profile: EntityProfile) -> None:
        if self._sealed:
            raise StoreClosed("store is sealed")
        latest = self._latest_profile.get(profile.entity_key)
        expected = (latest.version if latest else 0) + 1
        if profile.version != expected:
            raise ValueError(
                f"profile {profile.entity_key} version {profile.version}, expected {expected}")
        self._profile_history.append(profile)
        self._latest_profile[profile.entity_key] = profile

    def latest_profile(self, entity_key: str) -> Optional[EntityProfile]:
        return self._latest_profile.get(entity_key)

    def profiles_for(self, persons: Sequence[str]) -> list[EntityProfile]:
        """Latest profiles for the requested keys, request order, missing omitted."""
        out = []
        for key in persons:
            profile = self._latest_profile.get(key)
            if profile is not None:
                out.append(profile)
        return out

    @property
    def profile_history(self) -> list[EntityProfile]:
        return list(self._profile_history)

    # -- persistence -----------------------------------------------------

    def persist(self, path, manifest_extra: Optional[dict] = None) -> None:
        path = Path(path)
        try:
            path.mkdir(parents=True, exist_ok=True)
            with (path / "entries.jsonl").open("w", encoding="utf-8") as fh:
                for entry_id in self.insertion_order:
                    fh.write(json.dumps(_entry_to_record(self.entries[entry_id]),
                                        sort_keys=True) + "\n")
            with (path / "turns.jsonl").open("w", encoding="utf-8") as fh:
                for turn_id in sorted(self.turns):
                    fh.write(json.dumps(asdict(self.turns[turn_id]),
                                        sort_keys=True) + "\n")
            with (path / "profiles.jsonl").open("w", encoding="utf-8") as fh:
                for profile in self._profile_history:
                    fh.write(json.dumps(profile.as_dict(), sort_keys=True) + "\n")
            dim = self.dim or 0
            with (path / "vectors.bin").open("wb") as fh:
                fh.write(VECTOR_MAGIC)
                fh.write(struct.pack("<III", SCHEMA_VERSION, dim, len(self._vectors)))
                if self._vectors:
                    np.stack(self._vectors).astype("<f4").tofile(fh)
            manifest = {
                "schema_version": SCHEMA_VERSION,
                "dim": dim,
                "entry_count": len(self.entries),
                "turn_count": len(self.turns),
                "profile_versions": len(self._profile_history),
                "sealed": self._sealed,
            }
            manifest.update(manifest_extra or {})
            (path / "manifest.json").write_text(
                json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        except OSError as exc:
            raise StoreIOError(str(exc))

    @classmethod
    def load(cls, path) -> "MemoryStore":
        path = Path(path)
        manifest_path = path / "manifest.json"
        if not manifest_path.exists():
            raise StoreIOError(f"{path}: not a store directory (missing manifest.json)")
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise StoreIOError(f"{manifest_path}: {exc}")
        if manifest.get("schema_version") != SCHEMA_VERSION:
            raise SchemaVersionMismatch(
                f"store schema {manifest.get('schema_version')} != {SCHEMA_VERSION}")

        store = cls()
        try:
            for line in (path / "turns.jsonl").read_text(encoding="utf-8").splitlines():
                if line.strip():
                    store.turns.update({(t := DialogueTurn(**json.loads(line))).turn_id: t})
            with (path / "vectors.bin").open("rb") as fh:
                magic = fh.read(4)
                if magic != VECTOR_MAGIC:
                    raise StoreIOError(f"bad vector file magic {magic!r}")
                version, dim, count = struct.unpack("<III", fh.read(12))
                if version != SCHEMA_VERSION:
                    raise SchemaVersionMismatch(
                        f"vector file schema {version} != {SCHEMA_VERSION}")
                data = np.fromfile(fh, dtype="<f4", count=dim * count)
            if dim:
                store.dim = dim
            vectors = data.reshape(count, dim) if count else np.zeros((0, dim or 0))
            for row, line in enumerate(
                    (path / "entries.jsonl").read_text(encoding="utf-8").splitlines()):
                if not line.strip():
                    continue
                entry = _entry_from_record(json.loads(line))
                store.entries[entry.entry_id] = entry
                store.insertion_order.append(entry.entry_id)
                store._row_of[entry.entry_id] = row
                store._vectors.append(vectors[row].copy())
                store._by_restatement[
                    _normalize_restatement(entry.lossless_restatement)] = entry.entry_id
            profiles_path = path / "profiles.jsonl"
            if profiles_path.exists():
                for line in profiles_path.read_text(encoding="utf-8").splitlines():
                    if line.strip():
                        store.add_profile(EntityProfile.from_dict(json.loads(line)))
        except OSError as exc:
            raise StoreIOError(str(exc))
        if manifest.get("sealed"):
            store.seal()
        return store

    def verify_anchors(self) -> None:
        """Raise DanglingAnchor unless every stored entry recovers cleanly."""
        self.recover_dialogue(self.insertion_order)
