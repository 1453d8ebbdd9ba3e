"""Operator entry point: manifest-driven runs binding all modules together.

Subcommands: gen, assess, report, export-sft, validate. Configuration comes
from a JSON file plus flag overrides (flags win); the effective config is
embedded in every run manifest. Exit code 0 means no errors and no
quarantined/flagged records above the configured thresholds.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from . import assess as assess_mod
from . import significance as sig
from .assess import SelectionMode, Strategy, StrategyKind, load_results
from .clauses import load_registry
from .corpus import load_dataset, load_policy, split_counts, split_disjointness_check
from .gateway import ModelHandle, load_provider_config
from .metrics import accuracy, clause_relevance
from .prtgen import (
    generate_augmented_dataset,
    load_prt_store,
    prt_stats,
    write_prt_store,
)
from .sftexport import export_sft, split_train_val

DEFAULT_CONFIG = {
    "k": 3,
    "seed": 42,
    "concurrency": 1,
    "quarantine_threshold": 0.25,
    "flag_threshold": 0.5,
}


class CliError(ValueError):
    pass


def _load_config(args: argparse.Namespace) -> dict:
    config = dict(DEFAULT_CONFIG)
    if args.config:
        config.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        config["_config_dir"] = str(Path(args.config).resolve().parent)
    for flag in ("seed", "concurrency", "cache_dir", "out_dir"):
        value = getattr(args, flag, None)
        if value is not None:
            config[flag] = value
    config.setdefault("out_dir", "out")
    return config


def _resolve(config: dict, key: str) -> Path:
    if key not in config:
        raise CliError(f"config field missing: {key}")
    path = Path(config[key])
    if not path.is_absolute() and "_config_dir" in config:
        path = Path(config["_config_dir"]) / path
    return path


def _load_handles(config: dict) -> dict[str, ModelHandle]:
    cache_dir = Path(config["cache_dir"]) if config.get("cache_dir") else None
    return load_provider_config(_resolve(config, "providers_file"), cache_dir=cache_dir)


def _handle(config: dict, role: str) -> ModelHandle:
    handles = _load_handles(config)
    model_id = config.get(f"{role}_model")
    if not model_id:
        raise CliError(f"config field missing: {role}_model")
    if model_id not in handles:
        raise CliError(f"{role}_model {model_id!r} not in providers file")
    return handles[model_id]


def _load_corpus(config: dict):
    registry = load_registry(_resolve(config, "registry_file"))
    policy = load_policy(
        _resolve(config, "policy_file"),
        registry,
        policy_id=config.get("policy_id"),
        title=config.get("policy_title", ""),
    )
    dataset = load_dataset(_resolve(config, "dataset_file"), policy=policy, registry=registry)
    return registry, policy, dataset


def _write_manifest(out_dir: Path, name: str, command: str, config: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "effective_config": {k: v for k, v in config.items() if not k.startswith("_")},
        "started_at": datetime.now(timezone.utc).isoformat(),
    }
    (out_dir / name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")


def cmd_gen(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out_dir = Path(config["out_dir"])
    _write_manifest(out_dir, "gen.manifest.json", "gen", config)

    registry, policy, dataset = _load_corpus(config)
    expert = _handle(config, "expert")

    aug, quarantine = generate_augmented_dataset(dataset, policy, expert)
    store_path = out_dir / f"{policy.policy_id}_{expert.model_id}.prts.jsonl"
    write_prt_store(aug, store_path)

    quarantine_path = out_dir / "quarantine.json"
    quarantine_path.write_text(
        json.dumps(
            [{"case_id": q.case_id, "reason": q.reason, "detail": q.detail} for q in quarantine],
            indent=2,
        )
        + "\n",
        "utf-8",
    )

    summary: dict = {
        "store": str(store_path),
        "generated": len(aug),
        "quarantined": len(quarantine),
    }
    if aug.triples:
        stats = prt_stats([prt for _, _, prt in aug.triples])
        summary["prt_stats"] = {
            "mu_word": stats.mu_word,
            "sigma_word": stats.sigma_word,
            "mu_sent": stats.mu_sent,
            "sigma_sent": stats.sigma_sent,
        }
    print(json.dumps(summary, indent=2))

    total = len(aug) + len(quarantine)
    if total and len(quarantine) / total > config["quarantine_threshold"]:
        print(f"quarantine fraction exceeds threshold {config['quarantine_threshold']}", file=sys.stderr)
        return 1
    return 0


def _parse_strategy(args: argparse.Namespace, config: dict) -> Strategy:
    kind = StrategyKind(args.strategy)
    selection = SelectionMode(args.select) if args.select else None
    k = args.k if args.k is not None else config["k"]
    if k < 1:
        raise CliError(f"--k must be >= 1, got {k}")
    return Strategy(kind=kind, selection=selection, k=k)


def cmd_assess(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out_dir = Path(config["out_dir"])
    strategy = _parse_strategy(args, config)

    registry, policy, dataset = _load_corpus(config)
    learner = _handle(config, "learner")
    judge = _handle(config, "judge") if config.get("judge_model") else None

    pool = None
    needs_pool = strategy.kind in (
        StrategyKind.FEWSHOT,
        StrategyKind.FEWSHOT_PRT,
        StrategyKind.SELFREFINE_PRT,
    )
    if needs_pool:
        store = args.prt_store or config.get("prt_store")
        if not store:
            raise CliError("--prt-store (or config prt_store) required for this strategy")
        pool = load_prt_store(store, dataset, policy.policy_id)

    results_path, summary = assess_mod.run_dataset(
        dataset,
        policy,
        strategy,
        learner,
        out_dir,
        pool=pool,
        judge=judge,
        seed=config["seed"],
        concurrency=config["concurrency"],
    )
    print(
        json.dumps(
            {
                "results": str(results_path),
                "run_id": summary.run_id,
                "total": summary.total,
                "executed": summary.executed,
                "skipped": summary.skipped,
                "accuracy_pct": summary.accuracy_pct,
                "unparsed": summary.unparsed,
                "failed_cases": summary.failed_cases,
                "flagged_cases": summary.flagged_cases,
            },
            indent=2,
        )
    )
    if summary.failed_cases:
        return 1
    if summary.total and len(summary.flagged_cases) / summary.total > config["flag_threshold"]:
        return 1
    return 0


def _run_manifest(results_path: Path) -> dict:
    manifest_path = results_path.with_name(
        results_path.name.replace(".results.jsonl", ".manifest.json")
    )
    if not manifest_path.exists():
        raise CliError(f"manifest not found next to results: {manifest_path}")
    return json.loads(manifest_path.read_text(encoding="utf-8"))


def cmd_report(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out_dir = Path(config["out_dir"])
    _write_manifest(out_dir, "report.manifest.json", "report", config)

    runs = []
    policy_ids = set()
    for path_str in args.results:
        path = Path(path_str)
        manifest = _run_manifest(path)
        results = load_results(path)
        policy_ids.add(manifest["policy_id"])
        runs.append((manifest, results))
    if len(policy_ids) > 1:
        raise CliError(f"mixed-policy inputs rejected: {sorted(policy_ids)}")

    handles = _load_handles(config) if config.get("providers_file") else {}

    rows = []
    for manifest, results in runs:
        acc = accuracy(results)
        handle = handles.get(manifest["learner_model"])
        cost = sig.run_cost(results, handle) if handle else None
        rows.append(
            {
                "run_id": manifest["run_id"],
                "policy_id": manifest["policy_id"],
                "strategy": manifest["strategy"],
                "model": manifest["learner_model"],
                "n": len(results),
                "accuracy_pct": acc,
                "cost_usd": cost,
            }
        )

    report: dict = {"runs": rows, "comparisons": []}

    # Clause relevance when the corpus config is available (regex extraction
    # offline; a judge_model upgrades extraction to the LLM route).
    if all(k in config for k in ("registry_file", "policy_file", "dataset_file")):
        registry, _policy, dataset = _load_corpus(config)
        judge = _handle(config, "judge") if config.get("judge_model") else None
        for (manifest, results), row in zip(runs, rows):
            try:
                rel = clause_relevance(results, dataset, registry, judge)
            except Exception as err:
                row["clause_relevance"] = {"error": str(err)}
                continue
            row["clause_relevance"] = {
                "mu_cited": rel.mu_cited,
                "recall_pct": rel.recall_pct,
                "exact_match_pct": rel.exact_match_pct,
                "top_incorrect_clause": (
                    rel.top_incorrect_clause.canonical if rel.top_incorrect_clause else None
                ),
                "coverage": rel.coverage,
                "fallback_extractions": rel.n_fallback_extractions,
            }

    # Pairwise one-sided paired t-tests on per-case correctness.
    raw_ps = []
    pair_meta = []
    for i in range(len(runs)):
        for j in range(i + 1, len(runs)):
            mi, ri = runs[i]
            mj, rj = runs[j]
            by_case_i = {r.case_id: 1.0 if r.correct else 0.0 for r in ri}
            by_case_j = {r.case_id: 1.0 if r.correct else 0.0 for r in rj}
            shared = sorted(set(by_case_i) & set(by_case_j))
            if len(shared) < 2:
                continue
            a = [by_case_i[c] for c in shared]
            b = [by_case_j[c] for c in shared]
            try:
                t_res = sig.paired_t_one_sided(a, b, sig.Direction.A_GT_B)
                d = sig.cohens_d(a, b)
            except sig.StatsError as err:
                report["comparisons"].append(
                    {"a": mi["run_id"], "b": mj["run_id"], "error": str(err)}
                )
                continue
            raw_ps.append(t_res.p)
            pair_meta.append(
                {
                    "a": mi["run_id"],
                    "b": mj["run_id"],
                    "n": len(shared),
                    "t": t_res.t,
                    "df": t_res.df,
                    "p_raw": t_res.p,
                    "cohens_d": d,
                }
            )
    if raw_ps:
        p_bonf = sig.bonferroni(raw_ps)
        p_holm = sig.holm(raw_ps)
        for meta, pb, ph in zip(pair_meta, p_bonf, p_holm):
            meta["p_bonferroni"] = pb
            meta["p_holm"] = ph
            report["comparisons"].append(meta)

    # Cost/accuracy frontier CSV.
    points = [
        sig.CostAccuracyPoint(label=r["run_id"], cost=r["cost_usd"], accuracy=r["accuracy_pct"])
        for r in rows
        if r["cost_usd"] is not None
    ]
    frontier = {p.label for p in sig.pareto_frontier(points)} if points else set()
    frontier_csv = out_dir / "pareto.csv"
    with frontier_csv.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "cost_usd", "accuracy_pct", "on_frontier"])
        for p in points:
            writer.writerow([p.label, p.cost, p.accuracy, int(p.label in frontier)])

    metrics_csv = out_dir / "metrics.csv"
    with metrics_csv.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy_id", "model", "strategy", "n", "accuracy_pct", "cost_usd"])
        for r in rows:
            writer.writerow(
                [r["policy_id"], r["model"], r["strategy"], r["n"], r["accuracy_pct"], r["cost_usd"]]
            )

    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(report, indent=2))
    return 0


def cmd_export_sft(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out_dir = Path(config["out_dir"])
    _write_manifest(out_dir, "export-sft.manifest.json", "export-sft", config)

    registry, policy, dataset = _load_corpus(config)
    store = args.prt_store or config.get("prt_store")
    if not store:
        raise CliError("--prt-store (or config prt_store) required")
    aug = load_prt_store(store, dataset, policy.policy_id)

    sft_path = out_dir / "sft.jsonl"
    summary = export_sft(aug, policy, registry, sft_path)

    result = {
        "records": summary.n_records,
        "full_policy_fallbacks": summary.n_full_policy_fallbacks,
        "out": str(sft_path),
    }
    if args.val_fraction:
        n_train, n_val = split_train_val(
            sft_path,
            args.val_fraction,
            config["seed"],
            out_dir / "sft.train.jsonl",
            out_dir / "sft.val.jsonl",
        )
        result["train_records"] = n_train
        result["val_records"] = n_val
    print(json.dumps(result, indent=2))
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    registry, policy, dataset = _load_corpus(config)
    report = split_disjointness_check(dataset)
    summary = {
        "policy_id": policy.policy_id,
        "policy_tokens": policy.approx_token_count,
        "clauses": len(policy.clause_ids),
        "registry_entries": len(registry),
        "splits": split_counts(dataset),
        "disjoint": report.ok,
        "shared_case_ids": report.shared_case_ids,
        "shared_text_hashes": [list(t) for t in report.shared_text_hashes],
    }
    print(json.dumps(summary, indent=2))
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prt-forge",
        description="Generate policy reasoning traces, run compliance assessments, and report metrics.",
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--concurrency", type=int, default=None)
    parser.add_argument("--cache-dir", dest="cache_dir", default=None)
    parser.add_argument("--out-dir", dest="out_dir", default=None)

    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a trace store from the train split")
    p_gen.set_defaults(func=cmd_gen)

    p_assess = sub.add_parser("assess", help="assess test cases with one strategy")
    p_assess.add_argument(
        "--strategy", required=True, choices=[k.value for k in StrategyKind]
    )
    p_assess.add_argument("--select", choices=[m.value for m in SelectionMode], default=None)
    p_assess.add_argument("--k", type=int, default=None)
    p_assess.add_argument("--prt-store", dest="prt_store", default=None)
    p_assess.set_defaults(func=cmd_assess)

    p_report = sub.add_parser("report", help="metrics, significance, cost, frontier")
    p_report.add_argument("results", nargs="+", help="result .jsonl files (shared policy)")
    p_report.set_defaults(func=cmd_report)

    p_export = sub.add_parser("export-sft", help="compile instruction-tuning records")
    p_export.add_argument("--prt-store", dest="prt_store", default=None)
    p_export.add_argument("--val-fraction", dest="val_fraction", type=float, default=0.0)
    p_export.set_defaults(func=cmd_export_sft)

    p_validate = sub.add_parser("validate", help="check corpus files and split hygiene")
    p_validate.set_defaults(func=cmd_validate)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
