import json

import pytest

from policytrace.clauses import ClauseId, Scheme
from policytrace.prtgen import generate_augmented_dataset
from policytrace.sftexport import SFTExportError, clause_text, export_sft, split_train_val


def cid(n):
    return ClauseId(f"Article {n}", Scheme.ARTICLE)


@pytest.fixture
def aug(dataset, policy, expert_handle):
    built, quarantine = generate_augmented_dataset(dataset, policy, expert_handle)
    assert not quarantine
    return built


def test_clause_text_slices_section(policy, registry):
    text = clause_text(policy, cid(2), registry)
    assert text.startswith("Article 2: Data Minimization")
    assert "necessary for the stated purpose" in text
    assert "Article 3" not in text
    assert text in policy.full_text


def test_clause_text_last_section_runs_to_end(policy, registry):
    text = clause_text(policy, cid(5), registry)
    assert text.startswith("Article 5: Access Rights")
    assert text.endswith("without charge.")


def test_clause_text_unresolvable(policy, registry):
    with pytest.raises(SFTExportError):
        clause_text(policy, cid(9), registry)


def test_export_records_shape(tmp_path, aug, policy, registry):
    out = tmp_path / "sft.jsonl"
    summary = export_sft(aug, policy, registry, out)
    assert summary.n_records == len(aug)
    assert summary.n_full_policy_fallbacks == 0

    records = [json.loads(l) for l in out.read_text(encoding="utf-8").splitlines()]
    assert [r["case_id"] for r in records] == sorted(aug.case_ids())
    for record in records:
        assert set(record) == {
            "instruction",
            "policy_context",
            "case",
            "target",
            "case_id",
            "full_policy_fallback",
        }
        assert record["target"].rstrip().endswith(("COMPLIANT", "NONCOMPLIANT"))
        assert "Final Judgment:" in record["target"]
        # every context block is a verbatim slice of the policy
        for part in record["policy_context"].split("\n\n"):
            assert part in policy.full_text


def test_export_target_preserves_trace(tmp_path, aug, policy, registry):
    out = tmp_path / "sft.jsonl"
    export_sft(aug, policy, registry, out)
    records = {
        json.loads(l)["case_id"]: json.loads(l)
        for l in out.read_text(encoding="utf-8").splitlines()
    }
    _, verdict, prt = next(t for t in aug.triples if t[0].case_id == "t01")
    assert records["t01"]["target"] == f"{prt.prt_text}\nFinal Judgment: {verdict.value}"


def test_export_full_policy_fallback(tmp_path, aug, policy, registry):
    from dataclasses import replace

    case, verdict, prt = aug.triples[0]
    aug.triples[0] = (replace(case, gold_clauses=frozenset()), verdict, prt)
    out = tmp_path / "sft.jsonl"
    summary = export_sft(aug, policy, registry, out)
    assert summary.n_full_policy_fallbacks == 1
    assert summary.flagged_case_ids == [case.case_id]
    records = [json.loads(l) for l in out.read_text(encoding="utf-8").splitlines()]
    flagged = next(r for r in records if r["case_id"] == case.case_id)
    assert flagged["full_policy_fallback"]
    assert flagged["policy_context"] == policy.full_text


def test_export_rejects_test_split(tmp_path, aug, dataset, policy, registry):
    c01 = dataset.by_id("c01")
    _, verdict, prt = aug.triples[0]
    aug.triples.append((c01, c01.gold_verdict, prt))
    with pytest.raises(SFTExportError):
        export_sft(aug, policy, registry, tmp_path / "sft.jsonl")


def test_split_train_val(tmp_path, aug, policy, registry):
    out = tmp_path / "sft.jsonl"
    export_sft(aug, policy, registry, out)
    n_train, n_val = split_train_val(
        out, 0.5, seed=3, train_out=tmp_path / "tr.jsonl", val_out=tmp_path / "va.jsonl"
    )
    assert n_train == 3 and n_val == 3
    train_ids = {
        json.loads(l)["case_id"]
        for l in (tmp_path / "tr.jsonl").read_text(encoding="utf-8").splitlines()
    }
    val_ids = {
        json.loads(l)["case_id"]
        for l in (tmp_path / "va.jsonl").read_text(encoding="utf-8").splitlines()
    }
    assert train_ids.isdisjoint(val_ids)
    assert train_ids | val_ids == set(aug.case_ids())


def test_split_train_val_fraction_bounds(tmp_path, aug, policy, registry):
    out = tmp_path / "sft.jsonl"
    export_sft(aug, policy, registry, out)
    with pytest.raises(SFTExportError):
        split_train_val(out, 1.0, 0, tmp_path / "t", tmp_path / "v")
    with pytest.raises(SFTExportError):
        split_train_val(out, -0.1, 0, tmp_path / "t", tmp_path / "v")
