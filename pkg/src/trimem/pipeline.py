"""End-to-end orchestration: memory build, question answering, evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .backend import Backend, BackendRouter
from .corpus import DialogueCorpus, SegmentationConfig, segment
from .errors import EmptyRecordSet, ValidationFailure
from .extraction import extract_entries
from .metrics import EvalRecord, bleu, build_report, coverage, token_f1
from .profiles import group_by_person, update_profile
from .qa import Answer, answer as generate_answer, assemble_context
from .retrieval import RetrievedContext, plan_for_question, retrieve
from .store import MemoryStore, RetrievalConfig

logger = logging.getLogger(__name__)


@dataclass
class QaItem:
    question: str
    reference: str
    category: int
    evidence: frozenset[int] = frozenset()

    @classmethod
    def from_dict(cls, rec: dict) -> "QaItem":
        return cls(
            question=rec["question"],
            reference=rec.get("reference") or rec.get("answer") or "",
            category=int(rec.get("category", 4)),
            evidence=frozenset(int(i) for i in rec.get("evidence", [])),
        )


def build_store(corpus: DialogueCorpus, prompts: dict[str, str],
                router: BackendRouter,
                seg_config: Optional[SegmentationConfig] = None,
                seal: bool = True) -> MemoryStore:
    """Segment, extract, insert, and update profiles window-by-window.

    Entries failing validation are dropped (with logged diagnostics) and
    ingestion continues with the survivors of each window.
    """
    seg_config = seg_config or SegmentationConfig()
    store = MemoryStore.for_corpus(corpus)
    backend = router.for_role("pipeline")
    embedder = router.for_role("embedding")
    for window in segment(corpus, seg_config):
        try:
            entries = extract_entries(window, prompts["extraction"], backend)
        except ValidationFailure as exc:
            logger.warning("window %d: %s", window.index, exc)
            entries = getattr(exc, "entries", [])
        if not entries:
            continue
        ids = store.insert_entries(entries, embedder)
        fresh, seen_ids = [], set()
        for entry, assigned in zip(entries, ids):
            if assigned in seen_ids:
                continue
            seen_ids.add(assigned)
            if store.entries[assigned].origin_window == window.index:
                fresh.append(store.entries[assigned])
        for person_key, person_entries in sorted(group_by_person(fresh).items()):
            existing = store.latest_profile(person_key)
            profile = update_profile(
                person_key, person_entries, existing, prompts["profile"],
                backend, window_index=window.index)
            store.add_profile(profile)
    store.verify_anchors()
    if seal:
        store.seal()
    return store


def answer_question(question: str, store: MemoryStore, prompts: dict[str, str],
                    router: BackendRouter, config: RetrievalConfig,
                    ) -> tuple[Answer, RetrievedContext]:
    backend = router.for_role("pipeline")
    plan = plan_for_question(question, prompts, backend, config)
    ctx = retrieve(plan, store, config, router.for_role("embedding"))
    result = generate_answer(question, ctx, prompts["answer"], backend)
    return result, ctx


def run_eval(qa_set: Sequence[QaItem], store: MemoryStore,
             prompts: dict[str, str], router: BackendRouter,
             config: RetrievalConfig,
             judge_fn=None,
             with_coverage: bool = True) -> list[EvalRecord]:
    """Answer every question and score it; returns per-question records.

    ``judge_fn(question, prediction, reference) -> (score, reasoning)``
    defaults to the LLM judge from the evolution module.
    """
    if not qa_set:
        raise EmptyRecordSet("empty qa set")
    if judge_fn is None:
        from .evolution import judge
        judge_fn = lambda q, p, r: judge(q, p, r, prompts["judge"],
                                         router.for_role("pipeline"))
    records = []
    for item in qa_set:
        result, ctx = answer_question(item.question, store, prompts, router, config)
        score, reasoning = judge_fn(item.question, result.answer_text, item.reference)
        record = EvalRecord(
            question=item.question,
            prediction=result.answer_text,
            reference=item.reference,
            category=item.category,
            f1=token_f1(result.answer_text, item.reference),
            bleu=bleu(result.answer_text, item.reference),
            judge_score=score,
            judge_reasoning=reasoning,
            token_cost=ctx.token_cost,
            retrieved_src_sets=[sorted(e.source_dialogue_ids)
                                for e, _ in ctx.ranked_entries],
        )
        if with_coverage:
            try:
                record.context_coverage = coverage(item.reference,
                                                   assemble_context(ctx))
            except Exception:
                record.context_coverage = None
        records.append(record)
    return records
