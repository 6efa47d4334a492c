"""Atomic fact extraction over dialogue windows.

Each accepted entry is a structured tuple: a lossless restatement (the
embedding key), optional event time and location, the persons and entities
it names, a topic, and the source dialogue IDs anchoring it back to the
verbatim turns of its origin window.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Optional, Sequence

from .backend import Backend, ChatRequest
from .corpus import Window, render_window
from .errors import ParseFailure, ValidationFailure
from .prompts import render

logger = logging.getLogger(__name__)

PRONOUNS = frozenset({"he", "she", "it", "they", "this", "that"})

# timestamp shapes the validator will coerce to full ISO 8601
_DATE_ONLY = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_DATE_HM = re.compile(r"^\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}$")
_DATE_HMS = re.compile(r"^\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}")


@dataclass(frozen=True)
class MemoryEntry:
    lossless_restatement: str
    keywords: frozenset[str] = frozenset()
    event_time: Optional[str] = None
    location: Optional[str] = None
    persons: frozenset[str] = frozenset()
    entities: frozenset[str] = frozenset()
    topic: str = ""
    source_dialogue_ids: frozenset[int] = frozenset()
    origin_window: int = 0
    entry_id: str = ""  # assigned at insert

    def person_keys(self) -> list[str]:
        """Normalized person keys, display order preserved."""
        return [normalize_person_key(p) for p in sorted(self.persons)]


def normalize_person_key(name: str) -> str:
    return " ".join(name.split()).casefold()


def normalize_display(name: str) -> str:
    return " ".join(name.split())


def _coerce_event_time(value: str) -> Optional[str]:
    value = value.strip()
    if _DATE_ONLY.match(value):
        try:
            datetime.fromisoformat(value)
        except ValueError:
            return None
        return f"{value}T00:00:00"
    if _DATE_HM.match(value):
        coerced = f"{value.replace(' ', 'T')}:00"
        try:
            datetime.fromisoformat(coerced)
        except ValueError:
            return None
        return coerced
    if _DATE_HMS.match(value):
        try:
            datetime.fromisoformat(value)
        except ValueError:
            return None
        return value.replace(" ", "T")
    try:
        datetime.fromisoformat(value)
    except ValueError:
        return None
    return value


def strip_code_fences(text: str) -> str:
    """Drop markdown code fences, keeping the fenced body."""
    text = text.strip()
    match = re.search(r"```(?:json)?\s*\n?(.*?)```", text, re.DOTALL)
    if match:
        return match.group(1).strip()
    return text


def _first_json_array(text: str) -> tuple[list, int]:
    """Decode the first well-formed JSON array embedded in ``text``."""
    decoder = json.JSONDecoder()
    for start in range(len(text)):
        if text[start] != "[":
            continue
        try:
            value, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            continue
        if isinstance(value, list):
            return value, start
    raise ParseFailure("no JSON array found in model output", offset=0)


def parse_entry_payload(text: str) -> list[dict]:
    """Tolerantly decode the JSON array of raw entry records.

    Strips code fences and surrounding prose; missing optional fields
    become absent (None), never empty-string sentinels.
    """
    body = strip_code_fences(text)
    records, _ = _first_json_array(body)
    parsed = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise ParseFailure(f"array element {i} is not an object", offset=i)
        parsed.append({
            "lossless_restatement": rec.get("lossless_restatement"),
            "keywords": rec.get("keywords") or [],
            "timestamp": rec.get("timestamp") or None,
            "location": rec.get("location") or None,
            "persons": rec.get("persons") or [],
            "entities": rec.get("entities") or [],
            "topic": rec.get("topic") or "",
            "source_dialogue_ids": rec.get("source_dialogue_ids") or [],
        })
    return parsed


def entry_from_record(record: dict, window_index: int) -> MemoryEntry:
    return MemoryEntry(
        lossless_restatement=str(record.get("lossless_restatement") or ""),
        keywords=frozenset(str(k) for k in record.get("keywords", [])),
        event_time=record.get("timestamp"),
        location=record.get("location"),
        persons=frozenset(str(p) for p in record.get("persons", [])),
        entities=frozenset(str(e) for e in record.get("entities", [])),
        topic=str(record.get("topic") or ""),
        source_dialogue_ids=frozenset(int(i) for i in record.get("source_dialogue_ids", [])),
        origin_window=window_index,
    )


def validate_entry(entry: MemoryEntry, window: Window) -> tuple[Optional[MemoryEntry], list[str]]:
    """Check entry invariants against its origin window.

    Returns (normalized entry, diagnostics). A failing entry yields
    (None, diagnostics); the caller decides whether to drop or abort.
    """
    diagnostics: list[str] = []
    if not entry.lossless_restatement.strip():
        diagnostics.append("empty restatement")
    if not entry.source_dialogue_ids:
        diagnostics.append("missing source_dialogue_ids")
    elif not entry.source_dialogue_ids <= window.turn_ids:
        outside = sorted(entry.source_dialogue_ids - window.turn_ids)
        diagnostics.append(f"source ids {outside} outside window {window.index}")
    for person in entry.persons:
        if person.strip().casefold() in PRONOUNS:
            diagnostics.append(f"pronoun person: {person!r}")
    for keyword in entry.keywords:
        if keyword.strip().casefold() in PRONOUNS:
            diagnostics.append(f"pronoun keyword: {keyword!r}")

    event_time = entry.event_time
    if event_time is not None:
        event_time = _coerce_event_time(str(event_time))
        if event_time is None:
            diagnostics.append(f"unparseable event_time: {entry.event_time!r}")

    if diagnostics:
        return None, diagnostics
    normalized = replace(
        entry,
        persons=frozenset(normalize_display(p) for p in entry.persons if p.strip()),
        event_time=event_time,
    )
    return normalized, []


def extract_entries(window: Window, extraction_prompt: str, backend: Backend,
                    context: str = "") -> list[MemoryEntry]:
    """Run fact extraction on one window and validate the structured output.

    Malformed output gets exactly one repair retry with the parse error
    appended to the prompt. If any entry fails validation, the raised
    ValidationFailure carries the surviving validated entries in
    ``.entries`` alongside per-entry diagnostics, so ingestion callers can
    drop the failures (never clamp them) and continue with the rest.
    """
    dialogue_text = render_window(window)
    prompt = render(extraction_prompt, context=context, dialogue_text=dialogue_text)
    reply = backend.complete(ChatRequest(prompt=prompt))
    try:
        records = parse_entry_payload(reply)
    except ParseFailure as exc:
        repair = (f"{prompt}\n\nYour previous reply could not be parsed "
                  f"({exc}). Return ONLY the JSON array.")
        reply = backend.complete(ChatRequest(prompt=repair))
        records = parse_entry_payload(reply)  # second failure surfaces

    entries: list[MemoryEntry] = []
    all_diagnostics: list[str] = []
    for record in records:
        candidate = entry_from_record(record, window.index)
        validated, diagnostics = validate_entry(candidate, window)
        if validated is None:
            logger.warning("dropping entry from window %d: %s",
                           window.index, "; ".join(diagnostics))
            all_diagnostics.extend(diagnostics)
            continue
        entries.append(validated)
    if all_diagnostics:
        failure = ValidationFailure(
            f"{len(all_diagnostics)} diagnostic(s) in window {window.index}",
            diagnostics=all_diagnostics,
        )
        failure.entries = entries
        raise failure
    return entries
