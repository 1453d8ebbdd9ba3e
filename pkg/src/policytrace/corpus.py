"""Policy and case dataset loading, validation, and persistence.

Datasets are newline-delimited JSON, one record per line:
{"case_id": str, "case_text": str, "verdict": "COMPLIANT"|"NONCOMPLIANT",
 "clauses": [str], "split": "train"|"test"}
Split hygiene (no train/test overlap by id or by exact text hash) is enforced
at load and re-checkable on demand.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

from .clauses import ClauseId, ClauseRegistry, Scheme, normalize
from .tokens import Tokenizer, estimate_tokens


class CorpusError(ValueError):
    pass


class Verdict(str, Enum):
    COMPLIANT = "COMPLIANT"
    NONCOMPLIANT = "NONCOMPLIANT"

    @classmethod
    def parse(cls, label: str) -> "Verdict":
        key = label.strip().upper().replace("-", "").replace(" ", "").replace("_", "")
        if key == "COMPLIANT":
            return cls.COMPLIANT
        if key == "NONCOMPLIANT":
            return cls.NONCOMPLIANT
        # XSTest-style good/bad labels map at ingestion.
        if key == "GOOD":
            return cls.COMPLIANT
        if key == "BAD":
            return cls.NONCOMPLIANT
        raise CorpusError(f"unknown verdict label: {label!r}")


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class Policy:
    policy_id: str
    title: str
    full_text: str
    clause_ids: tuple[ClauseId, ...]
    approx_token_count: int

    def __post_init__(self) -> None:
        if not self.full_text:
            raise CorpusError("empty_policy: policy text must be non-empty")
        if len(set(self.clause_ids)) != len(self.clause_ids):
            raise CorpusError("clause_ids must be unique")
        if self.approx_token_count < 0:
            raise CorpusError("approx_token_count must be non-negative")


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    case_text: str
    gold_verdict: Verdict
    gold_clauses: frozenset[ClauseId]
    split: Split

    def __post_init__(self) -> None:
        if not self.case_id:
            raise CorpusError("case_id must be non-empty")
        if not self.case_text:
            raise CorpusError(f"case {self.case_id}: case_text must be non-empty")


@dataclass
class Dataset:
    policy_id: str
    records: list[CaseRecord]
    provenance: str = ""

    def split_records(self, split: Split) -> list[CaseRecord]:
        return [r for r in self.records if r.split is split]

    @property
    def train(self) -> list[CaseRecord]:
        return self.split_records(Split.TRAIN)

    @property
    def test(self) -> list[CaseRecord]:
        return self.split_records(Split.TEST)

    def by_id(self, case_id: str) -> CaseRecord:
        for r in self.records:
            if r.case_id == case_id:
                return r
        raise KeyError(case_id)


_ARTICLE_HEADING_RE = re.compile(r"^(Article\s*\d+)\b", re.IGNORECASE)
_SECTION_HEADING_RE = re.compile(r"^(?:Section\s*)?(\d{3}\.\d{3})\b", re.IGNORECASE)


def _clause_markers(text: str, scheme: Scheme) -> list[tuple[int, str]]:
    """Line-leading clause markers with 1-based line numbers, document order."""
    markers: list[tuple[int, str]] = []
    pattern = _ARTICLE_HEADING_RE if scheme is Scheme.ARTICLE else _SECTION_HEADING_RE
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = pattern.match(line.strip())
        if m:
            mention = m.group(1)
            if scheme is Scheme.SECTION:
                mention = f"Section {mention}"
            markers.append((lineno, mention))
    return markers


def _registry_scheme(registry: ClauseRegistry) -> Scheme:
    schemes = {c.scheme for c in registry.canonicals()}
    if len(schemes) != 1:
        raise CorpusError(f"registry mixes schemes: {sorted(s.value for s in schemes)}")
    return next(iter(schemes))


def load_policy(
    path: str | Path,
    registry: ClauseRegistry,
    policy_id: Optional[str] = None,
    title: str = "",
    tokenizer: Tokenizer = estimate_tokens,
) -> Policy:
    """Load a UTF-8 policy text and resolve its clause markers.

    Clause ids come out in document order of first appearance; an unknown
    marker is an error reported with its line number.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"policy file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise CorpusError(f"empty_policy: {path}")

    scheme = _registry_scheme(registry)
    clause_ids: list[ClauseId] = []
    seen: set[ClauseId] = set()

    if scheme is Scheme.NAMED:
        # Named sections are located by title match per line.
        for lineno, line in enumerate(text.splitlines(), start=1):
            ids, _ = normalize(line.strip(), registry)
            for clause in ids:
                if clause not in seen:
                    seen.add(clause)
                    clause_ids.append(clause)
    else:
        for lineno, mention in _clause_markers(text, scheme):
            clause = registry.resolve(mention)
            if clause is None:
                raise CorpusError(f"{path}:{lineno}: clause marker not in registry: {mention!r}")
            if clause not in seen:
                seen.add(clause)
                clause_ids.append(clause)

    return Policy(
        policy_id=policy_id or registry.policy_id,
        title=title or (policy_id or registry.policy_id),
        full_text=text,
        clause_ids=tuple(clause_ids),
        approx_token_count=tokenizer(text),
    )


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class DisjointnessReport:
    shared_case_ids: list[str] = field(default_factory=list)
    shared_text_hashes: list[tuple[str, str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.shared_case_ids and not self.shared_text_hashes


def split_disjointness_check(dataset: Dataset) -> DisjointnessReport:
    """Report train/test collisions by case_id and by exact case_text hash."""
    report = DisjointnessReport()
    train_ids = {r.case_id for r in dataset.train}
    test_ids = {r.case_id for r in dataset.test}
    report.shared_case_ids = sorted(train_ids & test_ids)

    train_hashes = {text_hash(r.case_text): r.case_id for r in dataset.train}
    for r in dataset.test:
        h = text_hash(r.case_text)
        if h in train_hashes:
            report.shared_text_hashes.append((h, train_hashes[h], r.case_id))
    return report


def _record_from_obj(obj: dict, registry: Optional[ClauseRegistry], lineno: int) -> CaseRecord:
    try:
        clause_strings = obj.get("clauses", [])
        if registry is not None:
            gold: set[ClauseId] = set()
            for raw in clause_strings:
                ids, unknowns = normalize(raw, registry)
                if unknowns:
                    raise CorpusError(f"unknown clause {unknowns[0]!r}")
                gold.update(ids)
            gold_clauses = frozenset(gold)
        else:
            gold_clauses = frozenset(
                ClauseId(canonical=c, scheme=Scheme.NAMED) for c in clause_strings
            )
        return CaseRecord(
            case_id=obj["case_id"],
            case_text=obj["case_text"],
            gold_verdict=Verdict.parse(obj["verdict"]),
            gold_clauses=gold_clauses,
            split=Split(obj["split"]),
        )
    except (KeyError, ValueError) as err:
        raise CorpusError(f"line {lineno}: malformed record: {err}") from err


def load_dataset(
    path: str | Path,
    policy: Optional[Policy] = None,
    registry: Optional[ClauseRegistry] = None,
    provenance: str = "",
) -> Dataset:
    """Load and validate a newline-delimited case record file."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"dataset file not found: {path}")

    records: list[CaseRecord] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise CorpusError(f"line {lineno}: invalid JSON: {err}") from err
        record = _record_from_obj(obj, registry, lineno)
        if record.case_id in seen_ids:
            raise CorpusError(f"line {lineno}: duplicate_id: {record.case_id!r}")
        seen_ids.add(record.case_id)
        records.append(record)

    dataset = Dataset(
        policy_id=policy.policy_id if policy else (registry.policy_id if registry else ""),
        records=records,
        provenance=provenance or f"loaded from {path.name}",
    )
    report = split_disjointness_check(dataset)
    if not report.ok:
        raise CorpusError(
            f"train/test overlap: ids={report.shared_case_ids} "
            f"text_hashes={[h for h, _, _ in report.shared_text_hashes]}"
        )
    return dataset


def record_to_obj(record: CaseRecord) -> dict:
    return {
        "case_id": record.case_id,
        "case_text": record.case_text,
        "verdict": record.gold_verdict.value,
        "clauses": sorted(c.canonical for c in record.gold_clauses),
        "split": record.split.value,
    }


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    """Canonical serialization: fixed field order, sorted clause lists."""
    lines = [json.dumps(record_to_obj(r), ensure_ascii=False) for r in dataset.records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def split_counts(dataset: Dataset) -> dict[str, int]:
    return {"train": len(dataset.train), "test": len(dataset.test)}
