"""Demonstration selection from the trace-augmented train pool.

Random selection is seeded and content-addressed (same pool content, k, and
seed give the same draw on every platform). Relevance selection asks a judge
model for the k most similar candidate indices and repairs malformed replies
deterministically, flagging any record that needed repair or fallback.
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field

from .corpus import CaseRecord, Verdict
from .gateway import ASSESS_PROFILE, GatewayError, ModelHandle, complete
from .prompts import TemplateId, render
from .prtgen import AugmentedDataset, PRTRecord

Triple = tuple[CaseRecord, Verdict, PRTRecord]


class SelectionError(ValueError):
    pass


@dataclass
class SelectionResult:
    triples: list[Triple]
    flags: list[str] = field(default_factory=list)

    @property
    def repaired(self) -> bool:
        return bool(self.flags)


def _check_k(pool: AugmentedDataset, k: int) -> None:
    if not 1 <= k <= len(pool):
        raise SelectionError(f"k_out_of_range: k={k}, pool size {len(pool)}")


def select_random(pool: AugmentedDataset, k: int, seed: int) -> list[Triple]:
    """Draw k distinct triples; order is draw order.

    The RNG is seeded from sha256(pool content hash, k, seed) so the draw is
    a pure function of pool content, not of object identity or platform.
    """
    _check_k(pool, k)
    digest = hashlib.sha256(f"{pool.content_hash()}|{k}|{seed}".encode("utf-8")).digest()
    rng = random.Random(int.from_bytes(digest[:8], "big"))
    indices = list(range(len(pool)))
    picked: list[int] = []
    for _ in range(k):
        j = rng.randrange(len(indices))
        picked.append(indices.pop(j))
    return [pool.triples[i] for i in picked]


_INT_RE = re.compile(r"-?\d+")


def _parse_indices(reply: str, pool_size: int, k: int) -> tuple[list[int], bool]:
    """Parse a judge reply into indices. Returns (indices, clean).

    clean is False when deduplication, range filtering, or count repair
    changed anything relative to the literal reply.
    """
    raw = [int(tok) for tok in _INT_RE.findall(reply)]
    in_range: list[int] = []
    seen: set[int] = set()
    for idx in raw:
        if 0 <= idx < pool_size and idx not in seen:
            seen.add(idx)
            in_range.append(idx)
    clean = len(raw) == k and in_range == raw
    return in_range, clean


def _top_up(indices: list[int], pool_size: int, k: int) -> list[int]:
    """Deterministic repair: keep valid picks, fill with lowest unused indices."""
    result = indices[:k]
    used = set(result)
    candidate = 0
    while len(result) < k:
        if candidate not in used:
            result.append(candidate)
            used.add(candidate)
        candidate += 1
    return result


def format_candidates(pool: AugmentedDataset) -> str:
    blocks = []
    for i, (case, _verdict, _prt) in enumerate(pool.triples, start=1):
        clause_list = sorted(c.canonical for c in case.gold_clauses)
        clauses = ", ".join(clause_list) if clause_list else "unannotated"
        blocks.append(
            f"Case {i} (Description): {case.case_text}\n"
            f"Case {i} (Relevant Policy Clauses): {clauses}"
        )
    return "\n\n".join(blocks)


def _query_judge(
    target: CaseRecord, pool: AugmentedDataset, k: int, judge: ModelHandle, policy_name: str
) -> str:
    target_clauses = sorted(c.canonical for c in target.gold_clauses)
    prompt = render(
        TemplateId.SELECT_RELEVANT,
        {
            "k": k,
            "policy": policy_name,
            "max_index": len(pool) - 1,
            "case_information": target.case_text,
            "case_relevant_clauses": ", ".join(target_clauses) if target_clauses else "unannotated",
            "candidates": format_candidates(pool),
        },
    )
    return complete(judge, prompt, ASSESS_PROFILE).text


def _select_from_window(
    target: CaseRecord,
    pool: AugmentedDataset,
    k: int,
    judge: ModelHandle,
    policy_name: str,
    seed: int,
) -> tuple[list[int], list[str]]:
    flags: list[str] = []
    unreachable = 0
    for attempt in range(2):
        try:
            reply = _query_judge(target, pool, k, judge, policy_name)
        except GatewayError:
            unreachable += 1
            if unreachable == 2:
                raise SelectionError("judge_unreachable") from None
            continue
        indices, clean = _parse_indices(reply, len(pool), k)
        if clean:
            return indices, flags
        if len(indices) >= k:
            # Usable after dedup/range filtering; flag the repair on retry exhaustion.
            if attempt == 1:
                flags.append("indices_repaired")
                return indices[:k], flags
        elif indices and attempt == 1:
            flags.append("indices_topped_up")
            return _top_up(indices, len(pool), k), flags
    # parse_failed after retry: fall back to seeded random, flagged.
    flags.append("fallback_random")
    fallback = select_random(pool, k, seed)
    index_of = {id(t): i for i, t in enumerate(pool.triples)}
    return [index_of[id(t)] for t in fallback], flags


def select_relevant(
    target: CaseRecord,
    pool: AugmentedDataset,
    k: int,
    judge: ModelHandle,
    policy_name: str = "policy",
    seed: int = 0,
    window_size: int = 100,
) -> SelectionResult:
    """Pick the k pool triples most similar to the target, judged by an LLM.

    Pools larger than window_size are judged in windows with a final playoff
    round among window winners (one prompt cannot hold hundreds of cases).
    """
    _check_k(pool, k)
    if len(pool) == 1:
        return SelectionResult(triples=[pool.triples[0]])

    if len(pool) <= window_size:
        indices, flags = _select_from_window(target, pool, k, judge, policy_name, seed)
        return SelectionResult(triples=[pool.triples[i] for i in indices], flags=flags)

    winner_indices: list[int] = []
    flags: list[str] = []
    for start in range(0, len(pool), window_size):
        window = AugmentedDataset(
            policy_id=pool.policy_id, triples=pool.triples[start : start + window_size]
        )
        take = min(k, len(window))
        local, window_flags = _select_from_window(target, window, take, judge, policy_name, seed)
        winner_indices.extend(start + i for i in local)
        flags.extend(window_flags)

    playoff = AugmentedDataset(
        policy_id=pool.policy_id, triples=[pool.triples[i] for i in winner_indices]
    )
    final_local, final_flags = _select_from_window(target, playoff, k, judge, policy_name, seed)
    flags.extend(final_flags)
    return SelectionResult(
        triples=[playoff.triples[i] for i in final_local], flags=flags
    )
