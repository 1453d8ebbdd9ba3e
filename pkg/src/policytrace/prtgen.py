"""Generation, validation, and descriptive profiling of policy reasoning traces.

A trace is accepted only if it is enumerated (at least two "N." lines) and its
final enumerated line states exactly one verdict token that matches the case's
gold verdict. Failed generations get one retry, then are quarantined with the
failure reason so the drop-out rate stays auditable.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .corpus import CaseRecord, Dataset, Policy, Split, Verdict
from .gateway import PRT_GEN_PROFILE, ModelHandle, complete
from .prompts import TemplateId, render


class PRTError(ValueError):
    pass


@dataclass(frozen=True)
class ValidationFailure:
    reason: str  # format | ambiguous | missing_verdict | verdict_mismatch
    detail: str = ""


_ENUM_LINE_RE = re.compile(r"^\s*\d+\.\s*\S")
_NONCOMPLIANT_VARIANT_RE = re.compile(r"\bNON[-\s]COMPLIANT\b", re.IGNORECASE)


def _normalize_tokens(text: str) -> str:
    return _NONCOMPLIANT_VARIANT_RE.sub("NONCOMPLIANT", text)


def validate_prt(text: str, gold: Verdict) -> Optional[ValidationFailure]:
    """Check trace structure and verdict consistency; None means valid.

    NONCOMPLIANT is matched before COMPLIANT so the shorter token is never
    captured out of the longer one.
    """
    enum_lines = [line for line in text.splitlines() if _ENUM_LINE_RE.match(line)]
    if len(enum_lines) < 2:
        return ValidationFailure("format", f"found {len(enum_lines)} enumerated lines, need >= 2")

    final_line = _normalize_tokens(enum_lines[-1])
    has_non = re.search(r"\bNONCOMPLIANT\b", final_line, re.IGNORECASE) is not None
    has_comp = re.search(r"\bCOMPLIANT\b", final_line, re.IGNORECASE) is not None
    if has_non and has_comp:
        return ValidationFailure("ambiguous", "final line contains both verdict tokens")
    if not has_non and not has_comp:
        return ValidationFailure("missing_verdict", "final enumerated line states no verdict")

    stated = Verdict.NONCOMPLIANT if has_non else Verdict.COMPLIANT
    if stated is not gold:
        return ValidationFailure(
            "verdict_mismatch", f"trace states {stated.value}, gold is {gold.value}"
        )
    return None


def count_words(text: str) -> int:
    return len(text.split())


_SENTENCE_END_RE = re.compile(r"[.!?]+(?=\s|$)")


def count_sentences(text: str) -> int:
    """Sentences end in ./!/? ; an enumerated line with no terminal
    punctuation still counts as one sentence (enumeration boundary)."""
    total = 0
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        # Leading enumeration dots ("1.") are markers, not sentence ends.
        body = re.sub(r"^\d+\.\s*", "", stripped)
        ends = len(_SENTENCE_END_RE.findall(body))
        if ends == 0 and _ENUM_LINE_RE.match(line):
            ends = 1
        total += ends
    return max(total, 1) if text.strip() else 0


@dataclass
class PRTRecord:
    case_id: str
    expert_model: str
    prt_text: str
    echoed_verdict: Verdict
    word_count: int
    sentence_count: int
    prompt_hash: str
    created_at: str

    def __post_init__(self) -> None:
        if not self.prt_text:
            raise PRTError("prt_text must be non-empty")
        if self.word_count < 1 or self.sentence_count < 1:
            raise PRTError("counts must be >= 1")


@dataclass
class QuarantinedCase:
    case_id: str
    reason: str
    detail: str = ""


@dataclass
class AugmentedDataset:
    policy_id: str
    triples: list[tuple[CaseRecord, Verdict, PRTRecord]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.triples)

    def case_ids(self) -> list[str]:
        return [case.case_id for case, _, _ in self.triples]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for case, verdict, prt in self.triples:
            h.update(case.case_id.encode("utf-8"))
            h.update(verdict.value.encode("utf-8"))
            h.update(prt.prt_text.encode("utf-8"))
        return h.hexdigest()


def _build_record(
    case: CaseRecord, expert_model: str, prt_text: str, prompt_hash: str
) -> PRTRecord:
    return PRTRecord(
        case_id=case.case_id,
        expert_model=expert_model,
        prt_text=prt_text,
        echoed_verdict=case.gold_verdict,
        word_count=count_words(prt_text),
        sentence_count=count_sentences(prt_text),
        prompt_hash=prompt_hash,
        created_at=datetime.now(timezone.utc).isoformat(),
    )


def generate_prt(case: CaseRecord, policy: Policy, expert: ModelHandle) -> PRTRecord:
    """Generate one validated trace for a train case (one retry, then raise)."""
    if case.split is not Split.TRAIN:
        raise PRTError(f"case {case.case_id}: traces are generated from train cases only")

    prompt = render(
        TemplateId.PRT_GENERATE,
        {
            "policy": policy.full_text,
            "case": case.case_text,
            "verdict": case.gold_verdict.value,
        },
    )
    prompt_hash = hashlib.sha256(prompt.encode("utf-8")).hexdigest()

    last_failure: Optional[ValidationFailure] = None
    for _attempt in range(2):
        response = complete(expert, prompt, PRT_GEN_PROFILE)
        failure = validate_prt(response.text, case.gold_verdict)
        if failure is None:
            return _build_record(case, expert.model_id, response.text, prompt_hash)
        last_failure = failure
    assert last_failure is not None
    raise PRTError(
        f"validation_failed({last_failure.reason}) for case {case.case_id}: {last_failure.detail}"
    )


def generate_augmented_dataset(
    dataset: Dataset, policy: Policy, expert: ModelHandle
) -> tuple[AugmentedDataset, list[QuarantinedCase]]:
    """Generate traces for every train case; quarantine the irreparable ones.

    Output order follows dataset order regardless of any caller parallelism.
    """
    aug = AugmentedDataset(policy_id=policy.policy_id)
    quarantine: list[QuarantinedCase] = []
    for case in dataset.train:
        try:
            record = generate_prt(case, policy, expert)
        except PRTError as err:
            reason = "validation_failed"
            m = re.match(r"validation_failed\((\w+)\)", str(err))
            if m:
                reason = m.group(1)
            quarantine.append(QuarantinedCase(case.case_id, reason, str(err)))
            continue
        aug.triples.append((case, case.gold_verdict, record))
    return aug, quarantine


@dataclass
class PRTStats:
    mu_word: float
    sigma_word: float
    mu_sent: float
    sigma_sent: float
    n: int


def prt_stats(records: list[PRTRecord]) -> PRTStats:
    """Population mean and standard deviation over word and sentence counts."""
    if not records:
        raise PRTError("empty_input: no records to profile")
    n = len(records)

    def _mu_sigma(values: list[int]) -> tuple[float, float]:
        mu = sum(values) / n
        var = sum((v - mu) ** 2 for v in values) / n
        return mu, var**0.5

    mu_w, sd_w = _mu_sigma([r.word_count for r in records])
    mu_s, sd_s = _mu_sigma([r.sentence_count for r in records])
    return PRTStats(mu_word=mu_w, sigma_word=sd_w, mu_sent=mu_s, sigma_sent=sd_s, n=n)


def prt_record_to_obj(record: PRTRecord) -> dict:
    return {
        "case_id": record.case_id,
        "expert_model": record.expert_model,
        "prt_text": record.prt_text,
        "echoed_verdict": record.echoed_verdict.value,
        "word_count": record.word_count,
        "sentence_count": record.sentence_count,
        "prompt_hash": record.prompt_hash,
        "created_at": record.created_at,
    }


def write_prt_store(aug: AugmentedDataset, path: str | Path) -> None:
    lines = [json.dumps(prt_record_to_obj(prt), ensure_ascii=False) for _, _, prt in aug.triples]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_prt_store(path: str | Path, dataset: Dataset, policy_id: str) -> AugmentedDataset:
    """Rebuild an augmented dataset from a trace store, re-running validation.

    Exactly one expert model per store file; every case must be a train case.
    """
    aug = AugmentedDataset(policy_id=policy_id)
    experts: set[str] = set()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        obj = json.loads(line)
        record = PRTRecord(
            case_id=obj["case_id"],
            expert_model=obj["expert_model"],
            prt_text=obj["prt_text"],
            echoed_verdict=Verdict(obj["echoed_verdict"]),
            word_count=obj["word_count"],
            sentence_count=obj["sentence_count"],
            prompt_hash=obj["prompt_hash"],
            created_at=obj["created_at"],
        )
        experts.add(record.expert_model)
        if len(experts) > 1:
            raise PRTError(f"line {lineno}: store mixes expert models: {sorted(experts)}")
        case = dataset.by_id(record.case_id)
        if case.split is not Split.TRAIN:
            raise PRTError(f"line {lineno}: case {record.case_id} is not in the train split")
        failure = validate_prt(record.prt_text, case.gold_verdict)
        if failure is not None:
            raise PRTError(
                f"line {lineno}: stored trace fails validation ({failure.reason}): {failure.detail}"
            )
        if record.case_id in set(aug.case_ids()):
            raise PRTError(f"line {lineno}: duplicate trace for case {record.case_id}")
        aug.triples.append((case, case.gold_verdict, record))
    return aug
