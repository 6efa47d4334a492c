"""Operator command-line surface.

Commands: ingest, build, query, answer, eval, evolve, ablate, inspect.
Configuration precedence is flags > environment > config file; every
command writes a run manifest (config hash, prompt round, backend usage)
so scripted runs replay exactly.

Exit codes: 0 success, 1 usage, 2 data/validation, 3 backend/transport.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import errors
from .backend import Backend, BackendRouter, HttpBackend, ScriptedBackend
from .corpus import SegmentationConfig, load_corpus, segment
from .extraction import normalize_person_key
from .evolution import PromptSet, best_round, evolve
from .metrics import build_report, write_report
from .pipeline import QaItem, answer_question, build_store, run_eval
from .prompts import seed_prompts
from .qa import assemble_context
from .retrieval import plan_for_question, retrieve
from .store import MemoryStore, RetrievalConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3

ENV_API_BASE = "TRIMEM_API_BASE"
ENV_API_KEY = "TRIMEM_API_KEY"
ENV_CONFIG = "TRIMEM_CONFIG"


@dataclass
class RunConfig:
    corpus: Optional[str] = None
    store_dir: Optional[str] = None
    prompt_dir: Optional[str] = None
    prompt_round: Optional[int] = None
    window_size: int = 40
    stride: int = 38
    top_k: int = 25
    per_query_k: Optional[int] = None
    anchor_count: int = 5
    profile_count: int = 2
    query_cap: int = 3
    use_search_plan: bool = True
    hit_k: int = 5
    api_base: Optional[str] = None
    api_key: Optional[str] = None
    model_tag: str = ""
    senior_model_tag: str = ""
    embedding_model: str = ""
    scripted_fixture: Optional[str] = None
    max_calls: Optional[int] = None
    max_tokens: Optional[int] = None
    rounds: int = 4
    seed: int = 0

    def segmentation(self) -> SegmentationConfig:
        return SegmentationConfig(window_size=self.window_size, stride=self.stride)

    def retrieval(self) -> RetrievalConfig:
        return RetrievalConfig(
            top_k=self.top_k,
            per_query_k=self.per_query_k,
            anchor_count=self.anchor_count,
            profile_count=self.profile_count,
            query_cap=self.query_cap,
            use_search_plan=self.use_search_plan,
        )

    def config_hash(self) -> str:
        payload = json.dumps(
            {k: v for k, v in dataclasses.asdict(self).items() if k != "api_key"},
            sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def load_run_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig()
    config_path = getattr(args, "config", None) or os.environ.get(ENV_CONFIG)
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise errors.UsageError(f"bad config file {config_path}: {exc}")
        for key, value in doc.items():
            if hasattr(config, key):
                setattr(config, key, value)
            else:
                raise errors.UsageError(f"unknown config key {key!r}")
    if os.environ.get(ENV_API_BASE):
        config.api_base = os.environ[ENV_API_BASE]
    if os.environ.get(ENV_API_KEY):
        config.api_key = os.environ[ENV_API_KEY]
    for key in dataclasses.asdict(config):
        value = getattr(args, key, None)
        if value is not None:
            setattr(config, key, value)
    if getattr(args, "no_search_plan", False):
        config.use_search_plan = False
    return config


def make_router(config: RunConfig) -> BackendRouter:
    if config.scripted_fixture:
        backend = ScriptedBackend.from_fixture_file(
            config.scripted_fixture,
            max_calls=config.max_calls, max_tokens=config.max_tokens)
        return BackendRouter(pipeline=backend)
    if not config.api_base:
        raise errors.UsageError(
            f"no backend configured: set {ENV_API_BASE} or pass --scripted FIXTURE")
    pipeline = HttpBackend(config.api_base, config.api_key or "",
                           model_tag=config.model_tag,
                           embedding_model=config.embedding_model,
                           max_calls=config.max_calls,
                           max_tokens=config.max_tokens)
    senior = None
    if config.senior_model_tag and config.senior_model_tag != config.model_tag:
        senior = HttpBackend(config.api_base, config.api_key or "",
                             model_tag=config.senior_model_tag,
                             max_calls=config.max_calls,
                             max_tokens=config.max_tokens)
    return BackendRouter(pipeline=pipeline, senior=senior)


def load_prompts(config: RunConfig) -> tuple[dict[str, str], int]:
    """The prompt mapping for this run plus the effective round number."""
    if config.prompt_dir:
        round_number = config.prompt_round
        if round_number is None:
            rounds = sorted(
                int(p.name.split("_", 1)[1])
                for p in Path(config.prompt_dir).glob("round_*") if p.is_dir())
            if not rounds:
                raise errors.UsageError(f"no prompt rounds in {config.prompt_dir}")
            round_number = rounds[-1]
        prompt_set = PromptSet.load_round(config.prompt_dir, round_number)
        return prompt_set.as_prompt_dict(), round_number
    return seed_prompts(), 0


@contextlib.contextmanager
def store_lock(store_dir: Path):
    """One command per store directory at a time."""
    store_dir.mkdir(parents=True, exist_ok=True)
    lock_path = store_dir / ".lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise errors.UsageError(
            f"{store_dir} is locked by another command (stale? remove {lock_path})")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


def write_manifest(path: Path, config: RunConfig, prompt_round: int,
                   router: BackendRouter, extra: Optional[dict] = None) -> None:
    manifest = {
        "config": {k: v for k, v in dataclasses.asdict(config).items()
                   if k != "api_key"},
        "config_hash": config.config_hash(),
        "prompt_round": prompt_round,
        "backend_usage": router.for_role("pipeline").usage.as_dict(),
    }
    manifest.update(extra or {})
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def load_qa_set(path) -> list[QaItem]:
    items = []
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("["):
        records = json.loads(text)
    else:
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
    for rec in records:
        items.append(QaItem.from_dict(rec))
    return items


# -- commands ------------------------------------------------------------

def cmd_ingest(args) -> int:
    config = load_run_config(args)
    corpus = load_corpus(config.corpus)
    sessions = sorted({t.session_id for t in corpus.turns})
    print(json.dumps({
        "corpus_id": corpus.corpus_id,
        "turn_count": corpus.turn_count,
        "session_count": len(sessions),
        "windows": len(segment(corpus, config.segmentation())),
    }, indent=2))
    return EXIT_OK


def cmd_build(args) -> int:
    config = load_run_config(args)
    store_dir = Path(config.store_dir)
    if store_dir.exists() and any(store_dir.iterdir()) and not args.force:
        raise errors.UsageError(
            f"{store_dir} is not empty; pass --force to rebuild")
    corpus = load_corpus(config.corpus)
    prompts, prompt_round = load_prompts(config)
    router = make_router(config)
    with store_lock(store_dir):
        store = build_store(corpus, prompts, router,
                            seg_config=config.segmentation())
        store.persist(store_dir, manifest_extra={
            "config_hash": config.config_hash(),
            "prompt_round": prompt_round,
        })
        write_manifest(store_dir / "run_manifest.json", config, prompt_round,
                       router, extra={
                           "entry_count": len(store),
                           "profile_versions": len(store.profile_history),
                       })
    print(json.dumps({"store": str(store_dir), "entries": len(store),
                      "profiles": len(store.profile_history)}, indent=2))
    return EXIT_OK


def cmd_query(args) -> int:
    config = load_run_config(args)
    store = MemoryStore.load(config.store_dir)
    prompts, _ = load_prompts(config)
    router = make_router(config)
    plan = plan_for_question(args.question, prompts,
                             router.for_role("pipeline"), config.retrieval())
    ctx = retrieve(plan, store, config.retrieval(), router.for_role("embedding"))
    print(json.dumps({
        "question": args.question,
        "queries": list(plan.queries),
        "entries": [
            {"entry_id": e.entry_id, "score": score,
             "restatement": e.lossless_restatement,
             "source_dialogue_ids": sorted(e.source_dialogue_ids)}
            for e, score in ctx.ranked_entries
        ],
        "recovered_turns": [
            {"turn_id": t.turn_id, "speaker": t.speaker, "text": t.text}
            for t in ctx.recovered_turns
        ],
        "profiles": [p.as_dict() for p in ctx.profiles],
        "token_cost": ctx.token_cost,
    }, indent=2))
    return EXIT_OK


def cmd_answer(args) -> int:
    config = load_run_config(args)
    store = MemoryStore.load(config.store_dir)
    prompts, _ = load_prompts(config)
    router = make_router(config)
    result, ctx = answer_question(args.question, store, prompts, router,
                                  config.retrieval())
    if args.dump_context:
        Path(args.dump_context).write_text(assemble_context(ctx), encoding="utf-8")
    print(json.dumps({
        "question": result.question,
        "reasoning": result.reasoning,
        "answer": result.answer_text,
        "context_token_cost": result.context_token_cost,
    }, indent=2))
    return EXIT_OK


def _run_eval_to_dir(config: RunConfig, qa_path, out_dir: Path,
                     router: BackendRouter) -> dict:
    store = MemoryStore.load(config.store_dir)
    prompts, prompt_round = load_prompts(config)
    qa_set = load_qa_set(qa_path)
    records = run_eval(qa_set, store, prompts, router, config.retrieval())
    evidence = {item.question: sorted(item.evidence) for item in qa_set
                if item.evidence}
    report = build_report(
        records,
        evidence=evidence if len(evidence) == len(qa_set) else None,
        hit_k=config.hit_k,
        metadata={
            "prompt_round": prompt_round,
            "config_hash": config.config_hash(),
            "seed": config.seed,
        })
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report(report, records, out_dir / "report.json",
                 out_dir / "detailed_results.jsonl")
    write_manifest(out_dir / "run_manifest.json", config, prompt_round, router)
    return report


def cmd_eval(args) -> int:
    config = load_run_config(args)
    out_dir = Path(args.out or Path(config.store_dir) / "eval")
    router = make_router(config)
    report = _run_eval_to_dir(config, args.qa, out_dir, router)
    print(json.dumps({"report": str(out_dir / "report.json"),
                      "overall": report["overall"]}, indent=2))
    return EXIT_OK


def cmd_evolve(args) -> int:
    config = load_run_config(args)
    corpus = load_corpus(config.corpus)
    router = make_router(config)
    out_dir = Path(args.out)
    trajectory = evolve(
        corpus, load_qa_set(args.qa), config.rounds, router, out_dir,
        seg_config=config.segmentation(),
        retrieval_config=config.retrieval(),
    )
    best = best_round(trajectory)
    summary = {
        "rounds": [{"round": ps.round, "loss": loss} for ps, loss in trajectory],
        "best_round": best.round,
        "prompt_dir": str(out_dir),
    }
    (out_dir / "evolution_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(out_dir / "run_manifest.json", config, best.round, router)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


ABLATION_KNOBS = {"top_k", "use_search_plan", "window_size", "stride"}


def cmd_ablate(args) -> int:
    config = load_run_config(args)
    knob = args.knob
    if knob not in ABLATION_KNOBS:
        raise errors.UnknownKnob(
            f"unknown knob {knob!r}; choose from {sorted(ABLATION_KNOBS)}")
    values = []
    for raw in args.values.split(","):
        raw = raw.strip()
        if knob == "use_search_plan":
            values.append(raw.lower() in ("1", "true", "on", "yes"))
        else:
            values.append(int(raw))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    needs_rebuild = knob in ("window_size", "stride")
    rows = []
    for value in values:
        sweep_config = dataclasses.replace(config, **{knob: value})
        router = make_router(sweep_config)
        if needs_rebuild:
            row_store = out_dir / f"store_{knob}_{value}"
            corpus = load_corpus(sweep_config.corpus)
            prompts, prompt_round = load_prompts(sweep_config)
            with store_lock(row_store):
                store = build_store(corpus, prompts, router,
                                    seg_config=sweep_config.segmentation())
                store.persist(row_store, manifest_extra={
                    "config_hash": sweep_config.config_hash(),
                    "prompt_round": prompt_round,
                })
            sweep_config = dataclasses.replace(sweep_config,
                                               store_dir=str(row_store))
            router = make_router(sweep_config)  # fresh fixture state for eval
        report = _run_eval_to_dir(sweep_config, args.qa,
                                  out_dir / f"{knob}_{value}", router)
        rows.append({"knob": knob, "value": value,
                     "overall": report["overall"]})
    sweep_report = {"knob": knob, "rows": rows}
    (out_dir / "sweep_report.json").write_text(
        json.dumps(sweep_report, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    print(json.dumps(sweep_report, indent=2))
    return EXIT_OK


def cmd_inspect(args) -> int:
    config = load_run_config(args)
    store = MemoryStore.load(config.store_dir)
    if args.entry_id:
        entry = store.entries.get(args.entry_id)
        if entry is None:
            raise errors.UnknownEntry(args.entry_id)
        recovered = store.recover_dialogue([args.entry_id])[0][1]
        print(json.dumps({
            "entry_id": entry.entry_id,
            "restatement": entry.lossless_restatement,
            "persons": sorted(entry.persons),
            "source_dialogue_ids": sorted(entry.source_dialogue_ids),
            "origin_window": entry.origin_window,
            "anchored_turns": [
                {"turn_id": t.turn_id, "speaker": t.speaker, "text": t.text}
                for t in recovered
            ],
            "profiles": [p.as_dict() for p in store.profiles_for(
                sorted({normalize_person_key(p) for p in entry.persons}))],
        }, indent=2))
    else:
        print(json.dumps({
            "entries": len(store),
            "turns": len(store.turns),
            "profile_versions": len(store.profile_history),
            "sealed": store.sealed,
        }, indent=2))
    return EXIT_OK


# -- argument parsing ----------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run-config file")
    parser.add_argument("--scripted", dest="scripted_fixture",
                        help="scripted backend fixture (JSONL)")
    parser.add_argument("--prompts", dest="prompt_dir",
                        help="versioned prompt directory")
    parser.add_argument("--round", dest="prompt_round", type=int,
                        help="prompt round to load (default: latest)")
    parser.add_argument("--k", dest="top_k", type=int, help="retrieval top-K")
    parser.add_argument("--no-search-plan", action="store_true",
                        help="retrieve with the raw question only")
    parser.add_argument("--max-calls", dest="max_calls", type=int)
    parser.add_argument("--max-tokens", dest="max_tokens", type=int)
    parser.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trimem",
        description="Tri-granularity conversational memory engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and summarize a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--window", dest="window_size", type=int)
    p.add_argument("--stride", dest="stride", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build", help="build the memory store from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--store", dest="store_dir", required=True)
    p.add_argument("--window", dest="window_size", type=int)
    p.add_argument("--stride", dest="stride", type=int)
    p.add_argument("--force", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="retrieve context for a question")
    p.add_argument("--store", dest="store_dir", required=True)
    p.add_argument("--question", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("answer", help="answer a question from the store")
    p.add_argument("--store", dest="store_dir", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--dump-context", help="write the assembled context here")
    _add_common(p)
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("eval", help="run the QA evaluation harness")
    p.add_argument("--store", dest="store_dir", required=True)
    p.add_argument("--qa", required=True, help="QA set (JSONL or JSON array)")
    p.add_argument("--out", help="report directory (default STORE/eval)")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("evolve", help="run the prompt evolution loop")
    p.add_argument("--corpus", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--rounds", type=int)
    p.add_argument("--out", required=True, help="prompt version directory")
    _add_common(p)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("ablate", help="sweep one knob and tabulate results")
    p.add_argument("--store", dest="store_dir")
    p.add_argument("--corpus")
    p.add_argument("--qa", required=True)
    p.add_argument("--knob", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="dump store stats or one entry")
    p.add_argument("--store", dest="store_dir", required=True)
    p.add_argument("--entry-id")
    _add_common(p)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (errors.UsageError, errors.UnknownKnob) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return EXIT_USAGE
    except (errors.TransportError, errors.AuthError,
            errors.BudgetExceeded) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return EXIT_BACKEND
    except errors.TriMemError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
