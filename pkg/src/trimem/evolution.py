"""Lifelong prompt evolution from answer-quality feedback.

One round: rebuild memory with the current extraction/profile prompts,
answer the training questions, judge them, aggregate the loss, ask the
senior model for full-text prompt rewrites, and apply them as the next
version. The answer prompt is frozen across all rounds.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from .backend import Backend, BackendRouter, ChatRequest
from .corpus import DialogueCorpus, SegmentationConfig
from .errors import EmptyRecordSet, ParseFailure, PlaceholderLost, StoreIOError
from .extraction import strip_code_fences
from .metrics import EvalRecord
from .prompts import EXTRACTION_PLACEHOLDERS, PROFILE_PLACEHOLDERS, render, seed_prompts
from .store import RetrievalConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PromptSet:
    """The trainable prompt pair plus the frozen answer prompt."""
    extraction: str
    profile: str
    answer: str
    round: int = 0
    parent_round: Optional[int] = None

    @classmethod
    def seed(cls) -> "PromptSet":
        prompts = seed_prompts()
        return cls(extraction=prompts["extraction"], profile=prompts["profile"],
                   answer=prompts["answer"], round=0, parent_round=None)

    def as_prompt_dict(self, aux: Optional[dict[str, str]] = None) -> dict[str, str]:
        """Full prompt mapping for the pipeline (aux roles are fixed assets)."""
        prompts = dict(aux) if aux else {
            k: v for k, v in seed_prompts().items()
            if k not in ("extraction", "profile", "answer")
        }
        prompts.update(extraction=self.extraction, profile=self.profile,
                       answer=self.answer)
        return prompts

    def persist(self, prompt_dir) -> None:
        round_dir = Path(prompt_dir) / f"round_{self.round}"
        try:
            round_dir.mkdir(parents=True, exist_ok=True)
            (round_dir / "extraction.txt").write_text(self.extraction, encoding="utf-8")
            (round_dir / "profile.txt").write_text(self.profile, encoding="utf-8")
            (round_dir / "answer.txt").write_text(self.answer, encoding="utf-8")
            (round_dir / "meta.json").write_text(json.dumps({
                "round": self.round,
                "parent_round": self.parent_round,
            }, indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise StoreIOError(str(exc))

    @classmethod
    def load_round(cls, prompt_dir, round_number: int) -> "PromptSet":
        round_dir = Path(prompt_dir) / f"round_{round_number}"
        meta = json.loads((round_dir / "meta.json").read_text(encoding="utf-8"))
        return cls(
            extraction=(round_dir / "extraction.txt").read_text(encoding="utf-8"),
            profile=(round_dir / "profile.txt").read_text(encoding="utf-8"),
            answer=(round_dir / "answer.txt").read_text(encoding="utf-8"),
            round=meta["round"],
            parent_round=meta["parent_round"],
        )


@dataclass(frozen=True)
class TextGradient:
    rewritten_extraction_prompt: str
    rewritten_profile_prompt: str
    change_summary: str = ""


def _parse_json_object(text: str) -> dict:
    decoder = json.JSONDecoder()
    # scan the raw reply first: stripping fences up front would truncate
    # payloads whose string values themselves contain fenced examples
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


def judge(question: str, prediction: str, reference: str,
          judge_prompt: str, backend: Backend) -> tuple[float, str]:
    """Binary LLM-judge score; malformed output degrades to a 0.0 fail."""
    if not (question and prediction and reference):
        raise ValueError("question, prediction, and reference must be non-empty")
    prompt = render(judge_prompt, question=question, reference=reference,
                    prediction=prediction)
    reply = backend.complete(ChatRequest(prompt=prompt))
    for attempt in range(2):
        try:
            obj = _parse_json_object(reply)
            score = 1.0 if float(obj.get("score", 0.0)) >= 0.5 else 0.0
            return score, str(obj.get("reasoning") or "")
        except (ParseFailure, TypeError, ValueError):
            if attempt == 0:
                reply = backend.complete(ChatRequest(
                    prompt=f"{prompt}\n\nYour previous reply was not valid JSON. "
                           f"Return ONLY the JSON."))
    return 0.0, "(judge unparsed)"


def aggregate_loss(records: Sequence[EvalRecord],
                   metric: str = "judge") -> float:
    """Empirical mean of the negated score; in [-1, 0] for the binary judge."""
    if not records:
        raise EmptyRecordSet("no evaluation records")
    if metric == "judge":
        scores = [r.judge_score for r in records]
    elif metric == "f1":
        scores = [r.f1 for r in records]
    else:
        raise ValueError(f"unknown loss metric {metric!r}")
    return -sum(scores) / len(records)


def _check_placeholders(gradient: TextGradient) -> None:
    for placeholder in EXTRACTION_PLACEHOLDERS:
        if placeholder not in gradient.rewritten_extraction_prompt:
            raise PlaceholderLost(f"extraction rewrite lost {placeholder}")
    for placeholder in PROFILE_PLACEHOLDERS:
        if placeholder not in gradient.rewritten_profile_prompt:
            raise PlaceholderLost(f"profile rewrite lost {placeholder}")


def textual_gradient(records: Sequence[EvalRecord], prompts: PromptSet,
                     evolution_prompt: str, backend: Backend) -> TextGradient:
    """Obtain full-text rewrites of the trainable prompts from the senior model."""
    detailed = json.dumps(
        {"detailed_results": [r.detailed_record() for r in records]},
        indent=2)
    prompt = render(evolution_prompt,
                    extraction_prompt=prompts.extraction,
                    profile_prompt=prompts.profile,
                    detailed_results=detailed)
    reply = backend.complete(ChatRequest(prompt=prompt, max_output_tokens=8192))
    obj = _parse_json_object(reply)
    gradient = TextGradient(
        rewritten_extraction_prompt=str(obj.get("rewritten_p_ext") or ""),
        rewritten_profile_prompt=str(obj.get("rewritten_p_prof") or ""),
        change_summary=str(obj.get("change_summary") or ""),
    )
    if not gradient.rewritten_extraction_prompt or not gradient.rewritten_profile_prompt:
        raise ParseFailure("gradient reply missing a rewritten prompt")
    _check_placeholders(gradient)
    return gradient


def apply_gradient(prompts: PromptSet, gradient: TextGradient,
                   prompt_dir=None) -> PromptSet:
    """The prompt-editing operator: full-text replacement, version bumped."""
    _check_placeholders(gradient)
    child = PromptSet(
        extraction=gradient.rewritten_extraction_prompt,
        profile=gradient.rewritten_profile_prompt,
        answer=prompts.answer,
        round=prompts.round + 1,
        parent_round=prompts.round,
    )
    if prompt_dir is not None:
        child.persist(prompt_dir)
    return child


def replay_gradients(prompt_dir) -> list[PromptSet]:
    """Rebuild every prompt version from round 0 plus the gradient log."""
    prompt_dir = Path(prompt_dir)
    current = PromptSet.load_round(prompt_dir, 0)
    trajectory = [current]
    log_path = prompt_dir / "gradients.jsonl"
    if not log_path.exists():
        return trajectory
    for line in log_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("no_op"):
            current = replace(current, round=current.round + 1,
                              parent_round=current.round)
        else:
            gradient = TextGradient(
                rewritten_extraction_prompt=rec["rewritten_p_ext"],
                rewritten_profile_prompt=rec["rewritten_p_prof"],
                change_summary=rec.get("change_summary", ""),
            )
            current = apply_gradient(current, gradient)
        trajectory.append(current)
    return trajectory


def evolve(corpus: DialogueCorpus, train_set, rounds: int,
           router: BackendRouter, prompt_dir,
           seg_config: Optional[SegmentationConfig] = None,
           retrieval_config: Optional[RetrievalConfig] = None,
           initial: Optional[PromptSet] = None,
           loss_metric: str = "judge") -> list[tuple[PromptSet, float]]:
    """Run the optimization loop and return the (prompts, loss) trajectory.

    Each of the ``rounds`` gradient steps rebuilds memory from scratch with
    the current prompts, evaluates, and applies the rewrite; the final
    version is evaluated too, so the trajectory has rounds+1 points. A
    rejected gradient (lost placeholder) records the loss and carries the
    prompts forward unchanged.
    """
    from .pipeline import QaItem, build_store, run_eval

    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    items = [item if isinstance(item, QaItem) else QaItem.from_dict(item)
             for item in train_set]
    if not items:
        raise EmptyRecordSet("empty train set")

    retrieval_config = retrieval_config or RetrievalConfig()
    aux = {k: v for k, v in seed_prompts().items()
           if k not in ("extraction", "profile", "answer")}
    prompt_dir = Path(prompt_dir)
    prompt_dir.mkdir(parents=True, exist_ok=True)
    log_path = prompt_dir / "gradients.jsonl"

    current = initial or PromptSet.seed()
    current.persist(prompt_dir)
    trajectory: list[tuple[PromptSet, float]] = []

    def evaluate(prompts: PromptSet) -> tuple[list[EvalRecord], float]:
        pipeline_prompts = prompts.as_prompt_dict(aux)
        store = build_store(corpus, pipeline_prompts, router, seg_config)
        records = run_eval(items, store, pipeline_prompts, router,
                           retrieval_config, with_coverage=False)
        return records, aggregate_loss(records, metric=loss_metric)

    with log_path.open("a", encoding="utf-8") as log:
        for _ in range(rounds):
            records, loss = evaluate(current)
            trajectory.append((current, loss))
            try:
                gradient = textual_gradient(records, current,
                                            aux["evolution"],
                                            router.for_role("senior"))
                log.write(json.dumps({
                    "round": current.round,
                    "loss": loss,
                    "rewritten_p_ext": gradient.rewritten_extraction_prompt,
                    "rewritten_p_prof": gradient.rewritten_profile_prompt,
                    "change_summary": gradient.change_summary,
                }, sort_keys=True) + "\n")
                current = apply_gradient(current, gradient, prompt_dir)
            except PlaceholderLost as exc:
                logger.warning("round %d gradient rejected: %s", current.round, exc)
                log.write(json.dumps({
                    "round": current.round,
                    "loss": loss,
                    "no_op": True,
                    "reason": str(exc),
                }, sort_keys=True) + "\n")
                current = replace(current, round=current.round + 1,
                                  parent_round=current.round)
                current.persist(prompt_dir)

    _, final_loss = evaluate(current)
    trajectory.append((current, final_loss))
    return trajectory


def best_round(trajectory: Sequence[tuple[PromptSet, float]]) -> PromptSet:
    """Minimum-loss round, ties to the earliest."""
    best = min(trajectory, key=lambda pair: (pair[1], pair[0].round))
    return best[0]
