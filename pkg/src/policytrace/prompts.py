"""Prompt template rendering with typed bindings.

Templates live as external text assets (one file per TemplateId) so the
rendered prompts and the vendored golden files cannot silently diverge.
Placeholder syntax is `{name}`; demo-bearing templates take a `demos` list of
DemoBlock and number the blocks "CASE 1:", "CASE 2:", ... in given order.
"""

from __future__ import annotations

import difflib
import hashlib
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional

from .corpus import Verdict


class PromptError(ValueError):
    pass


class MissingBindingError(PromptError):
    pass


class DemoCountMismatchError(PromptError):
    pass


class TemplateId(str, Enum):
    BASE = "base"
    FEWSHOT = "fewshot"
    FEWSHOT_PRT = "fewshot_prt"
    SELFREFINE_INITIAL = "selfrefine_initial"
    SELFREFINE_CRITIQUE = "selfrefine_critique"
    SELFREFINE_JUDGMENT = "selfrefine_judgment"
    SELFREFINE_PRT_INITIAL = "selfrefine_prt_initial"
    SELFREFINE_PRT_CRITIQUE_JUDGMENT = "selfrefine_prt_critique_judgment"
    PRT_GENERATE = "prt_generate"
    SELECT_RELEVANT = "select_relevant"
    CLAUSE_EXTRACT = "clause_extract"
    UTILIZATION_COUNT = "utilization_count"
    POLICY_SUMMARIZE = "policy_summarize"


# Templates whose demo blocks carry PRT reasoning text.
_PRT_DEMO_TEMPLATES = {TemplateId.FEWSHOT_PRT, TemplateId.SELFREFINE_PRT_CRITIQUE_JUDGMENT}
_DEMO_TEMPLATES = _PRT_DEMO_TEMPLATES | {TemplateId.FEWSHOT}

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


@dataclass(frozen=True)
class DemoBlock:
    case_text: str
    verdict: Verdict
    prt_text: Optional[str] = None


def _template_text(template_id: TemplateId) -> str:
    return (
        resources.files("policytrace")
        .joinpath(f"templates/{template_id.value}.txt")
        .read_text(encoding="utf-8")
    )


def placeholders(template_id: TemplateId) -> set[str]:
    return set(_PLACEHOLDER_RE.findall(_template_text(template_id)))


def template_hash(template_id: TemplateId) -> str:
    return hashlib.sha256(_template_text(template_id).encode("utf-8")).hexdigest()


def check_template_sources() -> None:
    """Static check at load: every template file parses and its placeholder
    set is non-empty and well-formed (lowercase identifiers only)."""
    for template_id in TemplateId:
        text = _template_text(template_id)
        if not text:
            raise PromptError(f"template {template_id.value} is empty")
        names = placeholders(template_id)
        if not names:
            raise PromptError(f"template {template_id.value} has no placeholders")
        stray = re.findall(r"\{[^a-z_][^}]*\}", text)
        if stray:
            raise PromptError(f"template {template_id.value}: malformed placeholder {stray[0]!r}")


def format_demos(template_id: TemplateId, demos: list[DemoBlock]) -> str:
    if not demos:
        raise DemoCountMismatchError("at least one demonstration is required")
    wants_prt = template_id in _PRT_DEMO_TEMPLATES
    blocks = []
    for i, demo in enumerate(demos, start=1):
        if wants_prt:
            if demo.prt_text is None:
                raise PromptError(f"demo {i}: prt_text required for {template_id.value}")
            blocks.append(
                f"CASE {i}: {demo.case_text}\n"
                f"REASONING: {demo.prt_text}\n"
                f"VERDICT: {demo.verdict.value}"
            )
        else:
            if demo.prt_text is not None:
                raise PromptError(f"demo {i}: prt_text forbidden for {template_id.value}")
            blocks.append(f"CASE {i}: {demo.case_text}\nVERDICT: {demo.verdict.value}")
    return "\n\n".join(blocks)


def render(template_id: TemplateId, bindings: dict, k: Optional[int] = None) -> str:
    """Substitute bindings into a template, byte-exactly.

    Bindings must cover every placeholder and contain nothing extra. For
    demo-bearing templates, `demos` is a list of DemoBlock; `k`, when given,
    pins the expected demonstration count.
    """
    text = _template_text(template_id)
    required = placeholders(template_id)

    values = dict(bindings)
    if template_id in _DEMO_TEMPLATES:
        if "demos" not in values:
            raise MissingBindingError("demos")
        demos = values.pop("demos")
        if k is not None and len(demos) != k:
            raise DemoCountMismatchError(f"expected {k} demos, got {len(demos)}")
        values["demos"] = format_demos(template_id, demos)

    missing = required - set(values)
    if missing:
        raise MissingBindingError(", ".join(sorted(missing)))
    extraneous = set(values) - required
    if extraneous:
        raise PromptError(f"extraneous bindings: {', '.join(sorted(extraneous))}")

    def _sub(match: re.Match) -> str:
        return str(values[match.group(1)])

    return _PLACEHOLDER_RE.sub(_sub, text)


def golden_check(
    template_id: TemplateId, fixture_bindings: dict, golden_dir: str | Path
) -> tuple[bool, str]:
    """Render with fixture bindings and compare byte-for-byte to the golden.

    Returns (passed, diff); diff is empty on pass.
    """
    rendered = render(template_id, fixture_bindings)
    golden_path = Path(golden_dir) / f"{template_id.value}.golden.txt"
    golden = golden_path.read_text(encoding="utf-8")
    if rendered == golden:
        return True, ""
    diff = "\n".join(
        difflib.unified_diff(
            golden.splitlines(),
            rendered.splitlines(),
            fromfile=str(golden_path),
            tofile=f"render({template_id.value})",
            lineterm="",
        )
    )
    return False, diff
