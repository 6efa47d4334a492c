"""Per-person entity profiles synthesized from grouped facts.

Profiles are sectioned text documents rebuilt in full on every update;
the version history is append-only and only the latest version serves
retrieval.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .backend import Backend, ChatRequest
from .errors import ParseFailure, ValidationFailure
from .extraction import MemoryEntry, normalize_display, normalize_person_key
from .prompts import render

SECTION_LABELS = (
    "Identity",
    "Personality",
    "How Others Describe Them",
    "Interests",
    "Career",
    "Values",
    "Beliefs/Spirituality",
    "Relationships",
    "Life Events",
    "Preferences",
)

_SECTION_RE = re.compile(r"^\[([^\]]+)\]\s*(.*)$")


@dataclass(frozen=True)
class EntityProfile:
    entity_key: str
    display_name: str
    sections: tuple[tuple[str, str], ...]  # ordered (label, text)
    version: int = 0
    last_updated_window: int = 0

    def section(self, label: str) -> Optional[str]:
        for name, text in self.sections:
            if name == label:
                return text
        return None

    def as_dict(self) -> dict:
        return {
            "entity_key": self.entity_key,
            "display_name": self.display_name,
            "version": self.version,
            "window": self.last_updated_window,
            "sections": {label: text for label, text in self.sections},
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "EntityProfile":
        return cls(
            entity_key=rec["entity_key"],
            display_name=rec["display_name"],
            version=rec["version"],
            last_updated_window=rec.get("window", 0),
            sections=tuple((label, text) for label, text in rec["sections"].items()),
        )


def group_by_person(entries: Sequence[MemoryEntry]) -> dict[str, list[MemoryEntry]]:
    """Group entries by each person they name (normalized keys).

    An entry naming k persons appears in k groups; entries naming nobody
    appear in none.
    """
    groups: dict[str, list[MemoryEntry]] = {}
    for entry in entries:
        for person in sorted(entry.persons):
            groups.setdefault(normalize_person_key(person), []).append(entry)
    return groups


def parse_profile_text(text: str) -> tuple[str, tuple[tuple[str, str], ...]]:
    """Parse the bracketed-label profile format.

    Returns (display name, ordered sections). Raises ParseFailure when the
    ``Entity:`` header is missing or no labeled section is present.
    """
    lines = [ln.rstrip() for ln in text.strip().splitlines()]
    display_name = None
    sections: list[tuple[str, str]] = []
    current_label = None
    current_lines: list[str] = []

    def flush():
        if current_label is not None:
            sections.append((current_label, "\n".join(current_lines).strip()))

    for line in lines:
        if display_name is None and line.lower().startswith("entity:"):
            display_name = line.split(":", 1)[1].strip()
            continue
        match = _SECTION_RE.match(line)
        if match:
            flush()
            current_label = match.group(1).strip()
            current_lines = [match.group(2)] if match.group(2) else []
        elif current_label is not None:
            current_lines.append(line)
    flush()

    if display_name is None:
        raise ParseFailure("profile output missing 'Entity:' header")
    sections = [(label, body) for label, body in sections if body]
    if not sections:
        raise ValidationFailure("profile output has no populated sections")
    return display_name, tuple(sections)


def serialize_profile(profile: EntityProfile) -> str:
    lines = [f"Entity: {profile.display_name}"]
    for label, body in profile.sections:
        lines.append(f"[{label}] {body}")
    return "\n".join(lines)


def update_profile(person: str, new_entries: Sequence[MemoryEntry],
                   existing: Optional[EntityProfile],
                   profile_prompt: str, backend: Backend,
                   window_index: int = 0) -> EntityProfile:
    """Synthesize the complete replacement profile for one person.

    With zero new entries no model call is made and the existing profile is
    returned unchanged. Unlabeled output gets one repair retry before
    surfacing ParseFailure.
    """
    if not new_entries:
        if existing is None:
            raise ValueError("no existing profile and no new entries")
        return existing

    display = normalize_display(person)
    facts = "\n".join(f"- {e.lossless_restatement}" for e in new_entries)
    existing_text = serialize_profile(existing) if existing else "No profile yet."
    prompt = render(profile_prompt, entity_name=display, facts=facts,
                    existing_profile=existing_text)
    reply = backend.complete(ChatRequest(prompt=prompt))
    try:
        display_name, sections = parse_profile_text(reply)
    except ParseFailure as exc:
        repair = (f"{prompt}\n\nYour previous reply could not be parsed ({exc}). "
                  f"Output the profile in the exact bracketed-label format.")
        reply = backend.complete(ChatRequest(prompt=repair))
        display_name, sections = parse_profile_text(reply)

    return EntityProfile(
        entity_key=normalize_person_key(person),
        display_name=display_name or display,
        sections=sections,
        version=(existing.version if existing else 0) + 1,
        last_updated_window=window_index,
    )
