"""Compile trace-augmented train data into instruction-tuning records.

Each record carries only the clause texts gold-annotated for its case as
policy context, keeping finetuning inputs small; cases without annotations
fall back to the full policy text and are flagged.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

from .clauses import ClauseId, ClauseRegistry
from .corpus import Policy, Split
from .prtgen import AugmentedDataset


class SFTExportError(ValueError):
    pass


INSTRUCTION = (
    "Analyze the case against the policy context provided and give your "
    "step-by-step reasoning followed by a single final verdict, COMPLIANT or "
    "NONCOMPLIANT, with respect to the policy."
)


def clause_text(policy: Policy, clause: ClauseId, registry: ClauseRegistry) -> str:
    """Slice one clause's text out of the standardized policy document.

    A clause starts at the line carrying its canonical id or title and runs
    until the next clause heading or end of document.
    """
    meta = registry.entries.get(clause)
    needles = [clause.canonical]
    if meta:
        needles.extend(a for a in meta["aliases"] if a)

    lines = policy.full_text.splitlines()
    heading_res = [
        re.compile(r"^\s*" + re.escape(n).replace(r"\ ", r"\s*") + r"\b", re.IGNORECASE)
        for n in needles
    ]
    all_heading_res = []
    for other in policy.clause_ids:
        other_needles = [other.canonical]
        other_meta = registry.entries.get(other)
        if other_meta:
            other_needles.extend(a for a in other_meta["aliases"] if a)
        all_heading_res.extend(
            re.compile(r"^\s*" + re.escape(n).replace(r"\ ", r"\s*") + r"\b", re.IGNORECASE)
            for n in other_needles
        )

    start = None
    for i, line in enumerate(lines):
        if any(r.match(line) for r in heading_res):
            start = i
            break
    if start is None:
        raise SFTExportError(f"unresolvable_clause: {clause.canonical!r} not found in policy text")

    end = len(lines)
    for j in range(start + 1, len(lines)):
        if any(r.match(lines[j]) for r in all_heading_res) and not any(
            r.match(lines[j]) for r in heading_res
        ):
            end = j
            break
    return "\n".join(lines[start:end]).strip()


@dataclass
class ExportSummary:
    n_records: int
    n_full_policy_fallbacks: int
    flagged_case_ids: list[str] = field(default_factory=list)


def export_sft(
    aug: AugmentedDataset,
    policy: Policy,
    registry: ClauseRegistry,
    out: str | Path,
) -> ExportSummary:
    """Write one instruction-tuning record per triple, in deterministic case order."""
    records = []
    fallbacks: list[str] = []
    triples = sorted(aug.triples, key=lambda t: t[0].case_id)
    for case, verdict, prt in triples:
        if case.split is not Split.TRAIN:
            raise SFTExportError(f"case {case.case_id}: test-split case in export input")
        if case.gold_clauses:
            parts = [
                clause_text(policy, clause, registry)
                for clause in sorted(case.gold_clauses)
            ]
            policy_context = "\n\n".join(parts)
            flagged = False
        else:
            policy_context = policy.full_text
            flagged = True
            fallbacks.append(case.case_id)
        records.append(
            {
                "instruction": INSTRUCTION,
                "policy_context": policy_context,
                "case": case.case_text,
                "target": f"{prt.prt_text}\nFinal Judgment: {verdict.value}",
                "case_id": case.case_id,
                "full_policy_fallback": flagged,
            }
        )

    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(r, ensure_ascii=False) for r in records]
    out.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return ExportSummary(
        n_records=len(records),
        n_full_policy_fallbacks=len(fallbacks),
        flagged_case_ids=fallbacks,
    )


def split_train_val(
    records_path: str | Path,
    val_fraction: float,
    seed: int,
    train_out: str | Path,
    val_out: str | Path,
) -> tuple[int, int]:
    """Seeded disjoint split of an exported record file; fraction 0 keeps
    everything in train."""
    if not 0 <= val_fraction < 1:
        raise SFTExportError(f"invalid_fraction: {val_fraction}")
    lines = [l for l in Path(records_path).read_text(encoding="utf-8").splitlines() if l.strip()]
    rng = random.Random(seed)
    shuffled = list(lines)
    rng.shuffle(shuffled)
    n_val = int(len(shuffled) * val_fraction)
    val_lines = shuffled[:n_val]
    train_lines = shuffled[n_val:]
    Path(train_out).write_text(
        "\n".join(train_lines) + ("\n" if train_lines else ""), encoding="utf-8"
    )
    Path(val_out).write_text("\n".join(val_lines) + ("\n" if val_lines else ""), encoding="utf-8")
    return len(train_lines), len(val_lines)
