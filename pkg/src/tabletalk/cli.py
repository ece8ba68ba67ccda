"""Operator command line: ingest, forge, bench, analyze, export-sft,
validate, replay.

Exit codes: 0 on success, 1 when task-level failures exceed the
configured threshold (or validation finds violations), 2 on
configuration and usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .analysis import (
    BagOfWordsEmbedder,
    InsufficientRecords,
    ablation_stats,
    coverage,
    export_sft,
    question_corpora,
    similarity_matrix,
)
from .benchmark import (
    EvalConfig,
    compute_metrics,
    format_report,
    run_eval,
    select_fewshot_examples,
)
from .config import ConfigError, RunConfig, load_config
from .dialogue import RunContext, Student
from .gateway import (
    API_KEY_VAR,
    Gateway,
    HttpProvider,
    ModelEndpoint,
    ReplayProvider,
    ScriptedProvider,
    TranscriptLog,
    shared_limiter,
)
from .ingest import SAMPLER_VERSION, CorpusRef, LoadStats, load_corpus, sample_tasks, write_normalized
from .prompts import PromptPack
from .sandbox_client import SandboxClient
from .store import (
    TRANSCRIPT_NAME,
    build_curriculum,
    dumps_canonical,
    load_curriculum,
    validate_curriculum,
)
from .teacher import Teacher

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_CONFIG = 2


class UsageError(ValueError):
    pass


def _load_scripted_rules(path: str, role: str):
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict):
        if role not in data:
            raise UsageError(f"scripted fixture {path} has no {role!r} rules")
        return data[role]
    return data


def _build_gateway(role: str, cfg: dict, scripted_path: str | None, transcript, limiter):
    scripted = scripted_path or cfg.get("scripted") or ""
    if scripted:
        provider = ScriptedProvider(
            _load_scripted_rules(scripted, role), name=f"scripted:{role}"
        )
        return Gateway(provider, transcript=transcript, limiter=limiter)
    if not cfg.get("base_url"):
        raise UsageError(
            f"[{role}] needs either a scripted rules file or a base_url endpoint"
        )
    if not os.environ.get(API_KEY_VAR):
        raise UsageError(
            f"MODEL_API_KEY is not set but [{role}] uses a live endpoint "
            f"({cfg['base_url']}); export {API_KEY_VAR} or use --scripted"
        )
    endpoint = ModelEndpoint(
        base_url=cfg["base_url"],
        model=cfg["model"],
        temperature=cfg["temperature"],
        max_output_tokens=cfg["max_output_tokens"],
        timeout_s=cfg["timeout_s"],
        retry_budget=cfg["retry_budget"],
    )
    return Gateway(HttpProvider(endpoint), transcript=transcript, limiter=limiter)


def _prompt_pack(config: RunConfig) -> PromptPack:
    custom = config["run"]["prompt_pack"]
    return PromptPack(custom) if custom else PromptPack.default()


def _sandbox_from_config(config: RunConfig):
    sandbox_cfg = config["sandbox"]
    if not sandbox_cfg["enabled"]:
        return None
    return SandboxClient(
        command=sandbox_cfg["command"],
        timeout_ms=sandbox_cfg["timeout_ms"],
        memory_mb=sandbox_cfg["memory_mb"],
        max_concurrency=sandbox_cfg["max_concurrency"],
    )


def _load_tasks(config: RunConfig, corpus_override: str | None):
    corpus_cfg = config["corpus"]
    path = corpus_override or corpus_cfg["path"]
    if not path:
        raise UsageError("no corpus path: set [corpus].path or pass --corpus")
    ref = CorpusRef(corpus_cfg["dataset"], corpus_cfg["split"], path)
    stats = LoadStats()
    tasks = load_corpus(
        ref, table_answerable_only=corpus_cfg["table_answerable_only"], stats=stats
    )
    return ref, tasks, stats


def cmd_ingest(args) -> int:
    ref = CorpusRef(args.dataset, args.split, args.path)
    stats = LoadStats()
    tasks = load_corpus(ref, table_answerable_only=args.table_answerable_only, stats=stats)
    write_normalized(tasks, args.out)
    print(
        f"wrote {len(tasks)} tasks to {args.out} "
        f"(skipped: {stats.skipped_no_answer} no answer, {stats.skipped_not_table} not table)"
    )
    return EXIT_OK


def cmd_forge(args) -> int:
    config = load_config(args.config)
    if args.strategies:
        config.resolved["run"]["strategies"] = args.strategies.split(",")
    if args.seed is not None:
        config.resolved["run"]["seed"] = args.seed
    if args.student:
        config.resolved["student"]["model"] = args.student
    if args.teacher:
        config.resolved["teacher"]["model"] = args.teacher
    run_dir = Path(args.out or config["run"]["out_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)

    ref, tasks, stats = _load_tasks(config, args.corpus)
    seed = config["run"]["seed"]
    if config["run"]["sample"]:
        tasks = sample_tasks(tasks, config["run"]["sample"], seed)

    pack = _prompt_pack(config)
    transcript = TranscriptLog(run_dir / TRANSCRIPT_NAME)
    limiter = shared_limiter(config["run"]["in_flight"])
    student_gw = _build_gateway("student", config["student"], args.scripted, transcript, limiter)
    teacher_gw = _build_gateway("teacher", config["teacher"], args.scripted, transcript, limiter)
    student = Student(student_gw, pack, sandbox=_sandbox_from_config(config))
    teacher = Teacher(teacher_gw, pack, judge_mode=config["judge"]["mode"])
    ctx = RunContext(
        models={"student": student_gw.name, "teacher": teacher_gw.name},
        seeds={"sample": seed, "sampler": SAMPLER_VERSION},
        prompt_pack_hash=pack.content_hash,
    )
    curriculum = build_curriculum(
        tasks,
        student,
        teacher,
        ctx,
        config["run"]["strategies"],
        run_dir,
        workers=config["run"]["workers"],
        resume=args.resume,
        manifest_extra={
            "config_hash": config.config_hash,
            "config": config.resolved,
            "corpus": ref.to_json(),
            "corpus_skipped": {
                "no_answer": stats.skipped_no_answer,
                "not_table": stats.skipped_not_table,
            },
            "transcript_hash": None,  # patched below once the log is final
        },
    )
    counts = curriculum.manifest["counts"]
    print(
        f"forged {counts['cl']} clarifications and {counts['co']} corrections "
        f"from {counts['tasks']} tasks ({counts['candidates']} candidates) in {run_dir}"
    )
    manifest = curriculum.manifest
    manifest["transcript_hash"] = transcript.content_hash
    (run_dir / "manifest.json").write_text(
        dumps_canonical(manifest) + "\n", encoding="utf-8"
    )
    task_failures = counts["failures"].get("task", 0)
    if counts["tasks"] and task_failures / counts["tasks"] > config["run"]["failure_threshold"]:
        print(f"task failure rate above threshold: {task_failures}/{counts['tasks']}")
        return EXIT_FAILURES
    return EXIT_OK


def cmd_bench(args) -> int:
    config = load_config(args.config)
    if args.mode:
        config.resolved["bench"]["mode"] = args.mode
        if args.mode not in ("followup", "zeroshot", "fewshot"):
            raise UsageError(f"unknown mode {args.mode!r}")
    curriculum = load_curriculum(args.run)
    out_dir = Path(args.out or args.run)
    out_dir.mkdir(parents=True, exist_ok=True)
    pack = _prompt_pack(config)
    transcript = TranscriptLog(out_dir / "bench-transcript.jsonl")
    limiter = shared_limiter(config["run"]["in_flight"])
    student_gw = _build_gateway("student", config["student"], args.scripted, transcript, limiter)
    teacher_gw = _build_gateway("teacher", config["teacher"], args.scripted, transcript, limiter)
    student = Student(student_gw, pack, sandbox=_sandbox_from_config(config))
    teacher = Teacher(teacher_gw, pack, judge_mode=config["judge"]["mode"])

    mode = config["bench"]["mode"]
    eval_config = EvalConfig(
        mode=mode,
        seed=config["run"]["seed"],
        negatives_limit=config["bench"]["negatives_limit"] or None,
    )
    if mode == "fewshot":
        train_run = config["bench"]["train_run"]
        if not train_run:
            raise UsageError("[bench].train_run is required in fewshot mode")
        eval_config.fewshot_examples = select_fewshot_examples(load_curriculum(train_run))

    outcomes = run_eval(curriculum, student, teacher, eval_config)
    with (out_dir / "outcomes.jsonl").open("w", encoding="utf-8") as handle:
        for outcome in outcomes:
            handle.write(dumps_canonical(outcome.to_json()) + "\n")
    report = compute_metrics(outcomes)
    report_json = report.to_json()
    report_json["mode"] = mode
    report_json["config_hash"] = config.config_hash
    (out_dir / "report.json").write_text(
        dumps_canonical(report_json) + "\n", encoding="utf-8"
    )
    text = format_report(report)
    (out_dir / "report.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    failures = sum(1 for o in outcomes if o.classification_source == "error")
    if outcomes and failures / len(outcomes) > config["run"]["failure_threshold"]:
        print(f"task failure rate above threshold: {failures}/{len(outcomes)}")
        return EXIT_FAILURES
    return EXIT_OK


def cmd_analyze(args) -> int:
    curriculum = load_curriculum(args.run)
    out: dict = {"ablation_stats": ablation_stats(curriculum)}
    coverage_report = coverage(curriculum)
    out["coverage"] = {
        "containment_rate": coverage_report.containment_rate,
        "mean_fraction": coverage_report.mean_fraction,
        "records": len(coverage_report.records),
        "flagged": coverage_report.flagged,
    }
    corpora = question_corpora(curriculum)
    if corpora["original"]:
        named = {"original": corpora["original"], "rephrased": corpora["rephrased"]}
        if args.reference:
            reference = []
            for row in Path(args.reference).read_text(encoding="utf-8").splitlines():
                if row.strip():
                    record = json.loads(row)
                    reference.append((record["id"], record["question"]))
            named["reference"] = reference
        out["similarity"] = similarity_matrix(named, BagOfWordsEmbedder()).to_json()
    path = Path(args.out or (Path(args.run) / "analysis.json"))
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(_format_analysis(out))
    return EXIT_OK


def _format_analysis(out: dict) -> str:
    def fmt(value):
        return "*" if value is None else f"{value:.3f}"

    stats = out["ablation_stats"]
    cov = out["coverage"]
    lines = [
        "analysis                  | value",
        "--------------------------+------",
        f"table ablations           | {stats['table_ablations']}",
        f"table changed rate        | {fmt(stats['table_changed_rate'])}",
        f"column removal share      | {fmt(stats['column_removal_share'])}",
        f"value removal share       | {fmt(stats['value_removal_share'])}",
        f"mean fraction removed     | {fmt(stats['mean_fraction_removed'])}",
        f"table deficiency rate     | {fmt(stats['table_deficiency_rate'])}",
        f"question ablations        | {stats['question_ablations']}",
        f"question deficiency rate  | {fmt(stats['question_deficiency_rate'])}",
        f"coverage containment rate | {fmt(cov['containment_rate'])}",
        f"coverage mean fraction    | {fmt(cov['mean_fraction'])}",
        f"coverage records flagged  | {len(cov['flagged'])} of {cov['records']}",
    ]
    if "similarity" in out:
        sim = out["similarity"]
        for a in sim["names"]:
            for b in sim["names"]:
                if a < b:
                    lines.append(
                        f"sim {a} vs {b}: sentence {fmt(sim['sentence_sim'][a][b])}, "
                        f"rouge-2 {fmt(sim['rouge_f1'][a][b])}"
                    )
    return "\n".join(lines)


def cmd_export_sft(args) -> int:
    curricula = [load_curriculum(run) for run in args.run]
    count = export_sft(curricula, args.out, cap=args.cap, seed=args.seed, dedup=args.dedup)
    print(f"exported {count} conversations to {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    violations = validate_curriculum(args.run)
    for violation in violations:
        print(f"VIOLATION {violation}")
    if violations:
        print(f"{len(violations)} violations")
        return EXIT_FAILURES
    print("curriculum valid: all invariants hold")
    return EXIT_OK


def cmd_replay(args) -> int:
    from .ablation import AblatedTask, AblationRecord
    from .answers import Answer
    from .dialogue import (
        Candidate,
        StudentAttempt,
        run_clarification_flow,
        run_correction_flow,
    )
    from .tableprog import ExecResult
    from .tables import Table
    from .tasks import Task

    curriculum = load_curriculum(args.run)
    record = next((r for r in [*curriculum.cl, *curriculum.co] if r.id == args.record), None)
    if record is None:
        raise UsageError(f"record {args.record!r} not in cl.jsonl/co.jsonl")
    report = next(
        (r for r in curriculum.reports if r["task_id"] == record.base_task_id), None
    )
    if report is None:
        raise UsageError(f"base task {record.base_task_id} missing from candidates.jsonl")
    base = Task.from_json(report["task"])
    outcome = report["strategies"][record.strategy]
    wrong_json = outcome["wrong_attempt"]
    wrong = StudentAttempt(
        response=wrong_json["response"],
        method=wrong_json["method"],
        answer=Answer.from_json(wrong_json["answer"]) if wrong_json.get("answer") else None,
        program_source=wrong_json.get("program"),
        execution=ExecResult.from_json(wrong_json["execution"])
        if wrong_json.get("execution")
        else None,
    )
    ablated = AblatedTask(
        base=base,
        question=record.question,
        table=Table.from_json(record.table),
        ablation=AblationRecord.from_json(record.ablation),
    )
    candidate = Candidate(ablated, wrong)
    pack = PromptPack.default()
    if record.prompt_pack_hash != pack.content_hash:
        custom = curriculum.manifest.get("config", {}).get("run", {}).get("prompt_pack")
        if custom:
            pack = PromptPack(custom)
    transcript_path = Path(args.run) / TRANSCRIPT_NAME
    models = curriculum.manifest["models"]
    student = Student(
        Gateway(ReplayProvider(transcript_path, name=models["student"])), pack
    )
    teacher = Teacher(
        Gateway(ReplayProvider(transcript_path, name=models["teacher"])), pack,
        judge_mode=curriculum.manifest.get("config", {}).get("judge", {}).get("mode", "lenient"),
    )
    ctx = RunContext(
        models=models,
        seeds=curriculum.manifest["seeds"],
        prompt_pack_hash=record.prompt_pack_hash,
    )
    if record.scenario == "clarification":
        replayed = run_clarification_flow(candidate, student, teacher, ctx)
    else:
        replayed = run_correction_flow(candidate, student, teacher, ctx)
    if replayed.to_json() == record.to_json():
        print(f"replay of {record.id}: identical record reproduced")
        return EXIT_OK
    print(f"replay of {record.id}: MISMATCH")
    print(dumps_canonical(replayed.to_json()))
    return EXIT_FAILURES


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabletalk",
        description="Synthesize and benchmark verified clarification/correction "
        "dialogues for table question answering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize a dataset into task JSONL")
    p.add_argument("--dataset", required=True, choices=["tatqa", "wikitq", "normalized"])
    p.add_argument("--split", default="dev", choices=["train", "dev"])
    p.add_argument("--path", required=True, help="source file (dataset layout)")
    p.add_argument("--out", required=True, help="output normalized JSONL")
    p.add_argument(
        "--table-answerable-only",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="keep only questions answerable from the table alone",
    )
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("forge", help="build a curriculum from a corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", help="override [corpus].path")
    p.add_argument("--student", help="override [student].model")
    p.add_argument("--teacher", help="override [teacher].model")
    p.add_argument("--strategies", help="comma-separated strategy list")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory (default [run].out_dir)")
    p.add_argument("--resume", action="store_true", help="skip tasks already processed")
    p.add_argument("--scripted", help="scripted provider rules JSON (offline)")
    p.set_defaults(func=cmd_forge)

    p = sub.add_parser("bench", help="evaluate a student on a curriculum")
    p.add_argument("--config", required=True)
    p.add_argument("--run", required=True, help="curriculum run directory")
    p.add_argument("--mode", choices=["followup", "zeroshot", "fewshot"])
    p.add_argument("--out", help="output directory (default: run dir)")
    p.add_argument("--scripted", help="scripted provider rules JSON (offline)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("analyze", help="similarity/coverage/ablation reports")
    p.add_argument("--run", required=True)
    p.add_argument("--reference", help="external reference questions JSONL (id, question)")
    p.add_argument("--out", help="output JSON path (default run/analysis.json)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("export-sft", help="export training conversations")
    p.add_argument("--run", action="append", required=True, help="run dir (repeatable)")
    p.add_argument("--out", required=True)
    p.add_argument("--cap", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dedup", action="store_true")
    p.set_defaults(func=cmd_export_sft)

    p = sub.add_parser("validate", help="replay all curriculum invariants")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("replay", help="re-run a record from the transcript log")
    p.add_argument("--run", required=True)
    p.add_argument("--record", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InsufficientRecords as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: missing file: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
