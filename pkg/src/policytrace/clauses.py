"""Clause identifier canonicalization, expansion, and citation extraction.

Three citation schemes are supported: numbered articles ("Article 5"),
dotted regulation sections ("Section 164.512(a)"), and named sections
matched by title ("Stay in bounds"). Contracted mentions such as
"Article 1,3,4" or "Articles 5 and 6" expand to individual identifiers.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from .gateway import ModelHandle


class Scheme(str, Enum):
    ARTICLE = "article"
    SECTION = "section"
    NAMED = "named"


@dataclass(frozen=True, order=True)
class ClauseId:
    canonical: str
    scheme: Scheme

    def __str__(self) -> str:
        return self.canonical


class RegistryError(ValueError):
    pass


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def _title_key(s: str) -> str:
    """Case-insensitive, punctuation-stripped, single-spaced lookup key."""
    return " ".join(s.translate(_PUNCT_TABLE).lower().split())


# "Article 1,3,4", "Articles 5 and 6", "Article5(1)(f)"
_ARTICLE_RE = re.compile(
    r"\barticles?\s*("
    r"\d+(?:\([a-z0-9]+\))*"
    r"(?:\s*(?:,|and|&)\s*\d+(?:\([a-z0-9]+\))*)*"
    r")",
    re.IGNORECASE,
)
_ARTICLE_ITEM_RE = re.compile(r"\d+(?:\([a-z0-9]+\))*", re.IGNORECASE)

# "Section 164.512(a)", bare "164.502(b)", "Sections 164.502, 164.506"
_SECTION_RE = re.compile(
    r"(?:\bsections?\s*|§\s*)?("
    r"\d{3}\.\d{3}(?:\([a-z0-9]+\))*"
    r"(?:\s*(?:,|and|&)\s*\d{3}\.\d{3}(?:\([a-z0-9]+\))*)*"
    r")",
    re.IGNORECASE,
)
_SECTION_ITEM_RE = re.compile(r"\d{3}\.\d{3}(?:\([a-z0-9]+\))*", re.IGNORECASE)


@dataclass
class ClauseRegistry:
    """Maps canonical clause ids to titles and known alias spellings."""

    policy_id: str
    entries: dict[ClauseId, dict] = field(default_factory=dict)
    _alias_index: dict[str, ClauseId] = field(default_factory=dict, repr=False)

    def add(self, clause: ClauseId, title: str = "", aliases: Optional[list[str]] = None) -> None:
        all_aliases = set(aliases or [])
        all_aliases.add(clause.canonical)
        if clause.scheme is Scheme.NAMED and title:
            all_aliases.add(title)
        for alias in all_aliases:
            key = _title_key(alias)
            existing = self._alias_index.get(key)
            if existing is not None and existing != clause:
                raise RegistryError(
                    f"alias {alias!r} maps to both {existing.canonical!r} and {clause.canonical!r}"
                )
        self.entries[clause] = {"title": title, "aliases": sorted(all_aliases)}
        for alias in all_aliases:
            self._alias_index[_title_key(alias)] = clause

    def resolve(self, mention: str) -> Optional[ClauseId]:
        return self._alias_index.get(_title_key(mention))

    def canonicals(self) -> list[ClauseId]:
        return list(self.entries)

    @property
    def named_entries(self) -> list[ClauseId]:
        return [c for c in self.entries if c.scheme is Scheme.NAMED]

    def __len__(self) -> int:
        return len(self.entries)


def load_registry(path: str | Path) -> ClauseRegistry:
    """Load a registry sidecar file.

    Schema: {"policy_id": str, "clauses": [{"canonical", "scheme", "title", "aliases"}]}
    """
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    registry = ClauseRegistry(policy_id=data["policy_id"])
    for entry in data["clauses"]:
        clause = ClauseId(canonical=entry["canonical"], scheme=Scheme(entry["scheme"]))
        registry.add(clause, title=entry.get("title", ""), aliases=entry.get("aliases", []))
    return registry


def save_registry(registry: ClauseRegistry, path: str | Path) -> None:
    payload = {
        "policy_id": registry.policy_id,
        "clauses": [
            {
                "canonical": c.canonical,
                "scheme": c.scheme.value,
                "title": meta["title"],
                "aliases": meta["aliases"],
            }
            for c, meta in registry.entries.items()
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _expand_numbered_mentions(text: str) -> tuple[list[str], str]:
    """Expand article/section mentions; return (mentions, text with them removed)."""
    mentions: list[str] = []
    spans: list[tuple[int, int]] = []

    for m in _ARTICLE_RE.finditer(text):
        for item in _ARTICLE_ITEM_RE.findall(m.group(1)):
            mentions.append(f"Article {item}")
        spans.append(m.span())

    masked = list(text)
    for start, end in spans:
        for i in range(start, end):
            masked[i] = " "
    masked_text = "".join(masked)

    for m in _SECTION_RE.finditer(masked_text):
        for item in _SECTION_ITEM_RE.findall(m.group(1)):
            mentions.append(f"Section {item}")
        spans.append(m.span())

    remainder = list(masked_text)
    for start, end in spans:
        for i in range(start, min(end, len(remainder))):
            remainder[i] = " "
    return mentions, "".join(remainder)


def normalize(raw: str, registry: ClauseRegistry) -> tuple[list[ClauseId], list[str]]:
    """Canonicalize a free-form mention string against the registry.

    Returns (resolved ids in mention order, unresolved mention strings).
    Unknown mentions are never dropped silently.
    """
    if not raw.strip():
        return [], []

    mentions, remainder = _expand_numbered_mentions(raw)

    resolved: list[ClauseId] = []
    unknowns: list[str] = []
    seen: set[ClauseId] = set()

    for mention in mentions:
        clause = registry.resolve(mention)
        if clause is None:
            unknowns.append(mention)
        elif clause not in seen:
            seen.add(clause)
            resolved.append(clause)

    # Leftover comma-separated segments are candidate named-section titles.
    for segment in remainder.split(","):
        segment = " ".join(segment.split())
        if not segment or not _title_key(segment):
            continue
        clause = registry.resolve(segment)
        if clause is None:
            unknowns.append(segment)
        elif clause not in seen:
            seen.add(clause)
            resolved.append(clause)

    return resolved, unknowns


@dataclass
class ExtractionResult:
    cited: set[ClauseId]
    unknowns: list[str]
    used_fallback: bool = False


def _regex_extract(text: str, registry: ClauseRegistry) -> set[ClauseId]:
    """Deterministic offline extraction: pattern scan plus named-title search."""
    mentions, _ = _expand_numbered_mentions(text)
    cited: set[ClauseId] = set()
    for mention in mentions:
        clause = registry.resolve(mention)
        if clause is not None:
            cited.add(clause)

    text_key = _title_key(text)
    for clause in registry.named_entries:
        meta = registry.entries[clause]
        for alias in meta["aliases"]:
            key = _title_key(alias)
            if key and key in text_key:
                cited.add(clause)
                break
    return cited


def extract_cited_clauses(
    reasoning_text: str,
    registry: ClauseRegistry,
    judge: Optional["ModelHandle"] = None,
) -> ExtractionResult:
    """Extract the set of registry clauses cited in a reasoning text.

    Judge-based extraction is primary when a judge handle is supplied; one
    retry on malformed output, then the regex fallback engages and the record
    is flagged so metric reports can count degraded extractions.
    """
    if judge is None:
        return ExtractionResult(cited=_regex_extract(reasoning_text, registry), unknowns=[])

    from .gateway import GatewayError, complete
    from .prompts import TemplateId, render

    masterlist = ", ".join(c.canonical for c in registry.canonicals())
    prompt = render(
        TemplateId.CLAUSE_EXTRACT,
        {"policy_section_masterlist": masterlist, "reasoning_text": reasoning_text},
    )

    for _attempt in range(2):
        try:
            response = complete(judge, prompt, judge.default_config())
        except GatewayError:
            continue
        ids, unknowns = normalize(response.text, registry)
        if ids or not response.text.strip():
            return ExtractionResult(cited=set(ids), unknowns=unknowns)
    cited = _regex_extract(reasoning_text, registry)
    return ExtractionResult(cited=cited, unknowns=[], used_fallback=True)
