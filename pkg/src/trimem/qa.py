"""Context assembly, token estimation, and final answer generation."""
from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass
from typing import Callable, Optional

from .backend import Backend, ChatRequest
from .errors import ParseFailure
from .extraction import strip_code_fences
from .profiles import serialize_profile
from .prompts import render
from .retrieval import RetrievedContext

logger = logging.getLogger(__name__)

TOKEN_CALIBRATION = 1.3
_TOKEN_RE = re.compile(r"[\w']+|[^\w\s]+")


@dataclass
class Answer:
    question: str
    reasoning: str
    answer_text: str
    context_token_cost: int = 0
    latency_ms: int = 0


def estimate_tokens(text: str, calibration: float = TOKEN_CALIBRATION) -> int:
    """Approximate token count: words plus punctuation clusters, scaled.

    Deterministic and provider-free; an exact tokenizer can be plugged in
    behind the same signature where bit-accurate accounting matters.
    """
    if not text:
        return 0
    pieces = _TOKEN_RE.findall(text)
    return round(len(pieces) * calibration)


def assemble_context(ctx: RetrievedContext) -> str:
    """Render the retrieved context in the answer prompt's sectioned format.

    Section order is fixed: structured entries, then verbatim source
    dialogue, then profiles. Empty sections are omitted entirely.
    """
    sections = []
    if ctx.ranked_entries:
        lines = ["[Structured Memory Entries]"]
        for i, (entry, _) in enumerate(ctx.ranked_entries, 1):
            suffix = f" (event time: {entry.event_time})" if entry.event_time else ""
            lines.append(f"{i}. {entry.lossless_restatement}{suffix}")
        sections.append("\n".join(lines))
    if ctx.recovered_turns:
        lines = ["[Source Dialogues]"]
        for turn in ctx.recovered_turns:
            if turn.timestamp:
                lines.append(f"[ID:{turn.turn_id}] [{turn.timestamp}] {turn.speaker}: {turn.text}")
            else:
                lines.append(f"[ID:{turn.turn_id}] {turn.speaker}: {turn.text}")
        sections.append("\n".join(lines))
    if ctx.profiles:
        lines = ["[Entity Profiles]"]
        for profile in ctx.profiles:
            lines.append(serialize_profile(profile))
        sections.append("\n".join(lines))
    return "\n\n".join(sections)


def _parse_answer_payload(text: str) -> tuple[str, str]:
    decoder = json.JSONDecoder()
    for body in (text, strip_code_fences(text)):
        for start in range(len(body)):
            if body[start] != "{":
                continue
            try:
                value, _ = decoder.raw_decode(body, start)
            except json.JSONDecodeError:
                continue
            if isinstance(value, dict) and "answer" in value:
                return str(value.get("reasoning") or ""), str(value["answer"])
    raise ParseFailure("no answer object found in model output")


def answer(question: str, ctx: RetrievedContext, answer_prompt: str,
           backend: Backend) -> Answer:
    """Produce the final structured answer from the assembled context.

    Parsing is total: after one repair retry a still-malformed reply is
    returned verbatim as the answer with reasoning "(unparsed)".
    """
    context_text = assemble_context(ctx)
    prompt = render(answer_prompt, query=question, context=context_text)
    started = time.monotonic()
    reply = backend.complete(ChatRequest(prompt=prompt))
    try:
        reasoning, answer_text = _parse_answer_payload(reply)
    except ParseFailure:
        repair = (f"{prompt}\n\nYour previous reply was not valid JSON. "
                  f'Return ONLY {{"reasoning": "...", "answer": "..."}}.')
        reply2 = backend.complete(ChatRequest(prompt=repair))
        try:
            reasoning, answer_text = _parse_answer_payload(reply2)
        except ParseFailure:
            logger.warning("answer output unparsed for question %r", question[:80])
            reasoning, answer_text = "(unparsed)", reply
    latency_ms = int((time.monotonic() - started) * 1000)
    if not answer_text.strip():  # answer_text must be non-empty
        answer_text = reply.strip() or "(no answer)"
    return Answer(
        question=question,
        reasoning=reasoning,
        answer_text=answer_text,
        context_token_cost=estimate_tokens(context_text),
        latency_ms=latency_ms,
    )
