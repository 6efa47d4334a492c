"""Question analysis, search planning, and top-K retrieval with anchor expansion.

The search plan is produced by three LLM steps (required-information
analysis, targeted query generation, key-information extraction), each of
which degrades gracefully: any parse failure falls back to retrieving with
the original question alone, so retrieval never fails on output shape.
"""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .backend import Backend, ChatRequest
from .corpus import DialogueTurn
from .errors import ParseFailure
from .extraction import normalize_person_key, strip_code_fences
from .profiles import EntityProfile
from .prompts import render
from .store import MemoryStore, RetrievalConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InfoPlan:
    question_type: str = "general"
    key_entities: tuple[str, ...] = ()
    required_info: tuple[dict, ...] = ()
    relationships: tuple[str, ...] = ()
    minimal_queries_needed: int = 1

    @classmethod
    def degenerate(cls) -> "InfoPlan":
        return cls()


@dataclass(frozen=True)
class KeyInfo:
    keywords: tuple[str, ...] = ()
    persons: tuple[str, ...] = ()
    time_expression: Optional[str] = None
    location: Optional[str] = None
    entities: tuple[str, ...] = ()


@dataclass(frozen=True)
class SearchPlan:
    original_question: str
    queries: tuple[str, ...]
    key_info: KeyInfo = KeyInfo()

    def __post_init__(self):
        if not self.queries:
            raise ValueError("queries must be non-empty")
        if self.original_question not in self.queries:
            raise ValueError("queries must contain the original question")


@dataclass
class RetrievedContext:
    ranked_entries: list  # (MemoryEntry, score), scores non-increasing
    recovered_turns: list[DialogueTurn]
    profiles: list[EntityProfile]
    token_cost: int = 0


def _parse_json_object(text: str) -> dict:
    decoder = json.JSONDecoder()
    # raw reply first; fence-stripping only as a fallback so payloads whose
    # string values contain fenced snippets are not truncated
    for body in (text, strip_code_fences(text)):
        for start in range(len(body)):
            if body[start] != "{":
                continue
            try:
                value, _ = decoder.raw_decode(body, start)
            except json.JSONDecodeError:
                continue
            if isinstance(value, dict):
                return value
    raise ParseFailure("no JSON object found in model output")


def _complete_json(prompt: str, backend: Backend) -> dict:
    """One model call with a single repair retry; raises ParseFailure after both."""
    reply = backend.complete(ChatRequest(prompt=prompt))
    try:
        return _parse_json_object(reply)
    except ParseFailure as exc:
        repair = (f"{prompt}\n\nYour previous reply could not be parsed ({exc}). "
                  f"Return ONLY the JSON.")
        reply = backend.complete(ChatRequest(prompt=repair))
        return _parse_json_object(reply)


def analyze_question(question: str, analysis_prompt: str, backend: Backend) -> InfoPlan:
    """Derive the required-information plan; falls back to a degenerate plan."""
    if not question:
        raise ValueError("question must be non-empty")
    prompt = render(analysis_prompt, query=question)
    try:
        obj = _complete_json(prompt, backend)
        return InfoPlan(
            question_type=str(obj.get("question_type") or "general"),
            key_entities=tuple(str(e) for e in obj.get("key_entities") or []),
            required_info=tuple(d for d in obj.get("required_info") or []
                                if isinstance(d, dict)),
            relationships=tuple(str(r) for r in obj.get("relationships") or []),
            minimal_queries_needed=max(1, int(obj.get("minimal_queries_needed") or 1)),
        )
    except Exception as exc:  # fallback contract: never surface
        logger.warning("question analysis fell back to degenerate plan: %s", exc)
        return InfoPlan.degenerate()


def _parse_key_info(obj: dict) -> KeyInfo:
    return KeyInfo(
        keywords=tuple(str(k) for k in obj.get("keywords") or []),
        persons=tuple(str(p) for p in obj.get("persons") or []),
        time_expression=obj.get("time_expression") or None,
        location=obj.get("location") or None,
        entities=tuple(str(e) for e in obj.get("entities") or []),
    )


def generate_queries(question: str, plan: InfoPlan, query_prompt: str,
                     key_info_prompt: str, backend: Backend,
                     query_cap: int = 3) -> SearchPlan:
    """Produce the deduplicated, capped query list plus key-info fields.

    The original question is always present and first; the fallback plan
    is simply ``[question]``.
    """
    prompt = render(
        query_prompt,
        original_query=question,
        question_type=plan.question_type,
        key_entities=json.dumps(list(plan.key_entities)),
        required_info=json.dumps(list(plan.required_info)),
        relationships=json.dumps(list(plan.relationships)),
        minimal_queries_needed=str(plan.minimal_queries_needed),
    )
    try:
        obj = _complete_json(prompt, backend)
        raw_queries = [str(q) for q in obj.get("queries") or [] if str(q).strip()]
    except Exception as exc:
        logger.warning("query generation fell back to the question: %s", exc)
        raw_queries = []

    queries: list[str] = [question]
    seen = {question.casefold()}
    for q in raw_queries:
        key = q.casefold()
        if key in seen:
            continue
        seen.add(key)
        queries.append(q)
    queries = queries[:max(1, query_cap)]

    key_info = KeyInfo()
    try:
        key_info = _parse_key_info(
            _complete_json(render(key_info_prompt, query=question), backend))
    except Exception as exc:
        logger.warning("key-info extraction failed, continuing without: %s", exc)

    return SearchPlan(original_question=question, queries=tuple(queries),
                      key_info=key_info)


def retrieve(plan: SearchPlan, store: MemoryStore, config: RetrievalConfig,
             backend: Backend) -> RetrievedContext:
    """Execute the plan: multi-query top-K merge, then anchor expansion.

    Per-entry scores are the max across queries; the merged list is sorted
    descending with ties by insertion order and truncated to top_k. The top
    ``anchor_count`` entries contribute recovered source turns; profiles of
    the persons named by ranked entries are attached most-frequent first.
    """
    vectors = backend.embed(list(plan.queries))
    per_query_k = config.effective_per_query_k
    best: dict[str, float] = {}
    for row in range(len(plan.queries)):
        for entry_id, score in store.similarity_search(vectors[row], per_query_k):
            if entry_id not in best or score > best[entry_id]:
                best[entry_id] = score
    position = {entry_id: i for i, entry_id in enumerate(store.insertion_order)}
    ranked_ids = sorted(best, key=lambda e: (-best[e], position[e]))[:config.top_k]
    ranked = [(store.entries[e], best[e]) for e in ranked_ids]

    anchor_ids = ranked_ids[:config.anchor_count]
    seen_turns: set[int] = set()
    recovered: list[DialogueTurn] = []
    for _, turns in store.recover_dialogue(anchor_ids):
        for turn in turns:
            if turn.turn_id not in seen_turns:
                seen_turns.add(turn.turn_id)
                recovered.append(turn)
    recovered.sort(key=lambda t: t.turn_id)

    person_counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    for rank, (entry, _) in enumerate(ranked):
        for person in sorted(entry.persons):
            key = normalize_person_key(person)
            person_counts[key] += 1
            first_seen.setdefault(key, rank)
    ordered_persons = sorted(person_counts,
                             key=lambda p: (-person_counts[p], first_seen[p]))
    profiles = store.profiles_for(ordered_persons)[:config.profile_count]

    ctx = RetrievedContext(ranked_entries=ranked, recovered_turns=recovered,
                           profiles=profiles)
    from .qa import assemble_context, estimate_tokens  # qa imports this module
    ctx.token_cost = estimate_tokens(assemble_context(ctx))
    return ctx


def plan_for_question(question: str, prompts: dict[str, str], backend: Backend,
                      config: RetrievalConfig) -> SearchPlan:
    """Full planning path, or the bare single-query plan when disabled."""
    if not config.use_search_plan:
        return SearchPlan(original_question=question, queries=(question,))
    plan = analyze_question(question, prompts["question_analysis"], backend)
    return generate_queries(question, plan, prompts["query_generation"],
                            prompts["key_info"], backend,
                            query_cap=config.query_cap)
