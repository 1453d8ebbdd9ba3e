"""Assessment strategy execution: prompt flows, verdict parsing, resumable runs.

Five strategy kinds with fixed turn structures:
  base, fewshot, fewshot_prt  -> 1 turn
  selfrefine                  -> 3 turns (initial, critique, judgment)
  selfrefine_prt              -> 2 turns (initial, combined critique+judgment)
Results persist as one JSON object per line; reruns skip already-recorded
case ids, so an interrupted run resumes with only the missing cases.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Optional

from .corpus import CaseRecord, Dataset, Policy, Split, Verdict
from .gateway import ASSESS_PROFILE, ModelHandle, complete
from .prompts import DemoBlock, TemplateId, render, template_hash
from .prtgen import AugmentedDataset
from .select import SelectionResult, Triple, select_random, select_relevant


class AssessError(ValueError):
    pass


class StrategyKind(str, Enum):
    BASE = "base"
    FEWSHOT = "fewshot"
    FEWSHOT_PRT = "fewshot_prt"
    SELFREFINE = "selfrefine"
    SELFREFINE_PRT = "selfrefine_prt"


class SelectionMode(str, Enum):
    RAND = "rand"
    REL = "rel"


TURN_COUNTS = {
    StrategyKind.BASE: 1,
    StrategyKind.FEWSHOT: 1,
    StrategyKind.FEWSHOT_PRT: 1,
    StrategyKind.SELFREFINE: 3,
    StrategyKind.SELFREFINE_PRT: 2,
}

_PRT_KINDS = {StrategyKind.FEWSHOT_PRT, StrategyKind.SELFREFINE_PRT}
_POOL_KINDS = _PRT_KINDS | {StrategyKind.FEWSHOT}


@dataclass(frozen=True)
class Strategy:
    kind: StrategyKind
    selection: Optional[SelectionMode] = None
    k: int = 3

    def __post_init__(self) -> None:
        if self.k < 1:
            raise AssessError(f"k must be >= 1, got {self.k}")
        if self.kind in _PRT_KINDS:
            if self.selection is None:
                raise AssessError(f"{self.kind.value} requires a selection mode (rand or rel)")
        elif self.selection is not None:
            raise AssessError(f"{self.kind.value} does not take a selection mode")

    def label(self) -> str:
        if self.selection:
            return f"{self.kind.value}({self.selection.value},k={self.k})"
        if self.kind is StrategyKind.FEWSHOT:
            return f"{self.kind.value}(k={self.k})"
        return self.kind.value


@dataclass
class Turn:
    template_id: str
    prompt_hash: str
    response_text: str
    raw_cot: Optional[str] = None
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass
class InstanceResult:
    case_id: str
    strategy: str
    turns: list[Turn]
    parsed_verdict: Optional[Verdict]
    correct: Optional[bool]
    flags: list[str] = field(default_factory=list)


_NONCOMPLIANT_VARIANT_RE = re.compile(r"\bNON[-\s]COMPLIANT\b", re.IGNORECASE)
_TOKEN_RE = re.compile(r"\b(NONCOMPLIANT|COMPLIANT)\b", re.IGNORECASE)
_MARKER_RE = re.compile(r"final\s+judgment\s*:|final\s+verdict|verdict\s*:", re.IGNORECASE)


def parse_verdict(text: str) -> Optional[Verdict]:
    """Extract the decided verdict from model output; None means unparsed.

    Hyphen/space variants are normalized first. The decision is the token
    after the last labeled marker when one exists, otherwise the last
    whole-token occurrence anywhere. NONCOMPLIANT is tried before COMPLIANT
    at every site so the substring is never captured out of the longer token.
    """
    normalized = _NONCOMPLIANT_VARIANT_RE.sub("NONCOMPLIANT", text)
    tokens = list(_TOKEN_RE.finditer(normalized))
    if not tokens:
        return None

    markers = list(_MARKER_RE.finditer(normalized))
    for marker in reversed(markers):
        following = [t for t in tokens if t.start() >= marker.end()]
        if following:
            return Verdict(following[0].group(1).upper())
    return Verdict(tokens[-1].group(1).upper())


def _select_demos(
    case: CaseRecord,
    strategy: Strategy,
    pool: AugmentedDataset,
    judge: Optional[ModelHandle],
    policy: Policy,
    seed: int,
) -> tuple[list[Triple], list[str]]:
    # The target case must never appear in its own demonstration pool.
    if case.case_id in set(pool.case_ids()):
        raise AssessError(f"target case {case.case_id} found in demonstration pool")

    if strategy.selection is SelectionMode.REL:
        if judge is None:
            raise AssessError("relevance selection requires a judge handle")
        result: SelectionResult = select_relevant(
            case, pool, strategy.k, judge, policy_name=policy.title, seed=seed
        )
        return result.triples, result.flags
    # Per-case deterministic draw: mix the case id into the seed.
    case_seed = int.from_bytes(
        hashlib.sha256(f"{seed}|{case.case_id}".encode("utf-8")).digest()[:8], "big"
    )
    return select_random(pool, strategy.k, case_seed), []


def _demo_blocks(triples: list[Triple], with_prt: bool) -> list[DemoBlock]:
    return [
        DemoBlock(
            case_text=case.case_text,
            verdict=verdict,
            prt_text=prt.prt_text if with_prt else None,
        )
        for case, verdict, prt in triples
    ]


def run_instance(
    case: CaseRecord,
    policy: Policy,
    strategy: Strategy,
    learner: ModelHandle,
    pool: Optional[AugmentedDataset] = None,
    judge: Optional[ModelHandle] = None,
    seed: int = 0,
) -> InstanceResult:
    """Run one test case through a strategy's full turn sequence."""
    if case.split is not Split.TEST:
        raise AssessError(f"case {case.case_id}: assessment runs on test cases only")
    if strategy.kind in _POOL_KINDS and pool is None:
        raise AssessError(f"{strategy.kind.value} requires a demonstration pool")

    flags: list[str] = []
    turns: list[Turn] = []

    def _call(template_id: TemplateId, bindings: dict, k: Optional[int] = None) -> str:
        prompt = render(template_id, bindings, k=k)
        response = complete(learner, prompt, ASSESS_PROFILE)
        turns.append(
            Turn(
                template_id=template_id.value,
                prompt_hash=hashlib.sha256(prompt.encode("utf-8")).hexdigest(),
                response_text=response.text,
                raw_cot=response.raw_cot,
                prompt_tokens=response.prompt_tokens,
                completion_tokens=response.completion_tokens,
            )
        )
        return response.text

    base_bindings = {"policy": policy.full_text, "case": case.case_text}
    kind = strategy.kind

    if kind is StrategyKind.BASE:
        _call(TemplateId.BASE, base_bindings)
    elif kind in (StrategyKind.FEWSHOT, StrategyKind.FEWSHOT_PRT):
        triples, sel_flags = _select_demos(case, strategy, pool, judge, policy, seed)
        flags.extend(sel_flags)
        with_prt = kind is StrategyKind.FEWSHOT_PRT
        template = TemplateId.FEWSHOT_PRT if with_prt else TemplateId.FEWSHOT
        _call(
            template,
            {**base_bindings, "demos": _demo_blocks(triples, with_prt)},
            k=strategy.k,
        )
    elif kind is StrategyKind.SELFREFINE:
        initial = _call(TemplateId.SELFREFINE_INITIAL, base_bindings)
        critique = _call(
            TemplateId.SELFREFINE_CRITIQUE, {**base_bindings, "initial_reasoning": initial}
        )
        _call(
            TemplateId.SELFREFINE_JUDGMENT,
            {**base_bindings, "initial_reasoning": initial, "critique": critique},
        )
    elif kind is StrategyKind.SELFREFINE_PRT:
        triples, sel_flags = _select_demos(case, strategy, pool, judge, policy, seed)
        flags.extend(sel_flags)
        initial = _call(TemplateId.SELFREFINE_PRT_INITIAL, base_bindings)
        _call(
            TemplateId.SELFREFINE_PRT_CRITIQUE_JUDGMENT,
            {
                **base_bindings,
                "initial_reasoning": initial,
                "demos": _demo_blocks(triples, with_prt=True),
            },
            k=strategy.k,
        )
    else:  # pragma: no cover
        raise AssessError(f"unknown strategy kind: {kind}")

    verdict = parse_verdict(turns[-1].response_text)
    if verdict is None:
        flags.append("unparsed_verdict")
    return InstanceResult(
        case_id=case.case_id,
        strategy=strategy.label(),
        turns=turns,
        parsed_verdict=verdict,
        correct=None if verdict is None else (verdict is case.gold_verdict),
        flags=flags,
    )


def result_to_obj(result: InstanceResult) -> dict:
    return {
        "case_id": result.case_id,
        "strategy": result.strategy,
        "turns": [
            {
                "template_id": t.template_id,
                "prompt_hash": t.prompt_hash,
                "response_text": t.response_text,
                "raw_cot": t.raw_cot,
                "prompt_tokens": t.prompt_tokens,
                "completion_tokens": t.completion_tokens,
            }
            for t in result.turns
        ],
        "parsed_verdict": result.parsed_verdict.value if result.parsed_verdict else None,
        "correct": result.correct,
        "flags": result.flags,
    }


def result_from_obj(obj: dict) -> InstanceResult:
    return InstanceResult(
        case_id=obj["case_id"],
        strategy=obj["strategy"],
        turns=[
            Turn(
                template_id=t["template_id"],
                prompt_hash=t["prompt_hash"],
                response_text=t["response_text"],
                raw_cot=t.get("raw_cot"),
                prompt_tokens=t.get("prompt_tokens", 0),
                completion_tokens=t.get("completion_tokens", 0),
            )
            for t in obj["turns"]
        ],
        parsed_verdict=Verdict(obj["parsed_verdict"]) if obj.get("parsed_verdict") else None,
        correct=obj.get("correct"),
        flags=obj.get("flags", []),
    )


def load_results(path: str | Path) -> list[InstanceResult]:
    results = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            results.append(result_from_obj(json.loads(line)))
    return results


@dataclass
class RunSummary:
    run_id: str
    total: int
    executed: int
    skipped: int
    correct: int
    unparsed: int
    failed_cases: list[str] = field(default_factory=list)
    flagged_cases: list[str] = field(default_factory=list)

    @property
    def accuracy_pct(self) -> float:
        done = self.total - len(self.failed_cases)
        return 100.0 * self.correct / done if done else 0.0


def _write_manifest(
    path: Path,
    run_id: str,
    policy: Policy,
    strategy: Strategy,
    learner: ModelHandle,
    judge: Optional[ModelHandle],
    seed: int,
) -> None:
    manifest = {
        "run_id": run_id,
        "policy_id": policy.policy_id,
        "strategy": strategy.label(),
        "learner_model": learner.model_id,
        "judge_model": judge.model_id if judge else None,
        "seed": seed,
        "k": strategy.k,
        "template_hashes": {t.value: template_hash(t) for t in TemplateId},
        "started_at": datetime.now(timezone.utc).isoformat(),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_dataset(
    dataset: Dataset,
    policy: Policy,
    strategy: Strategy,
    learner: ModelHandle,
    out_dir: str | Path,
    pool: Optional[AugmentedDataset] = None,
    judge: Optional[ModelHandle] = None,
    seed: int = 0,
    run_id: Optional[str] = None,
    concurrency: int = 1,
) -> tuple[Path, RunSummary]:
    """Assess every test case; resumable and tolerant of per-case failures.

    The run manifest is written before any model call. Results append in
    dataset order even when instances execute in parallel.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if run_id is None:
        run_id = f"{policy.policy_id}_{strategy.label()}_{learner.model_id}_s{seed}"
        run_id = re.sub(r"[^A-Za-z0-9._-]+", "-", run_id)
    results_path = out_dir / f"{run_id}.results.jsonl"
    manifest_path = out_dir / f"{run_id}.manifest.json"

    _write_manifest(manifest_path, run_id, policy, strategy, learner, judge, seed)

    done_ids: set[str] = set()
    if results_path.exists():
        for result in load_results(results_path):
            done_ids.add(result.case_id)

    test_cases = dataset.test
    todo = [c for c in test_cases if c.case_id not in done_ids]
    failed: list[str] = []
    executed = 0

    def _run_one(case: CaseRecord) -> InstanceResult:
        return run_instance(
            case, policy, strategy, learner, pool=pool, judge=judge, seed=seed
        )

    with results_path.open("a", encoding="utf-8") as fh:
        if concurrency > 1 and len(todo) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=concurrency) as pool_exec:
                futures = [(case, pool_exec.submit(_run_one, case)) for case in todo]
                for case, future in futures:
                    try:
                        result = future.result()
                    except Exception as err:
                        failed.append(case.case_id)
                        continue
                    fh.write(json.dumps(result_to_obj(result), ensure_ascii=False) + "\n")
                    executed += 1
        else:
            for case in todo:
                try:
                    result = _run_one(case)
                except Exception:
                    failed.append(case.case_id)
                    continue
                fh.write(json.dumps(result_to_obj(result), ensure_ascii=False) + "\n")
                executed += 1

    results = load_results(results_path)
    summary = RunSummary(
        run_id=run_id,
        total=len(test_cases),
        executed=executed,
        skipped=len(done_ids),
        correct=sum(1 for r in results if r.correct),
        unparsed=sum(1 for r in results if r.parsed_verdict is None),
        failed_cases=failed,
        flagged_cases=[r.case_id for r in results if r.flags],
    )
    return results_path, summary
