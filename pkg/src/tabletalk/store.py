"""Curriculum persistence, run manifests, and invariant validation.

A run directory is self-describing: manifest.json + candidates.jsonl +
cl.jsonl + co.jsonl + transcript.jsonl. All JSON lines are written with
sorted keys and no trailing whitespace so scripted runs are byte-stable.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path

from . import __version__ as tool_version
from .ablation import AblationRecord, reconstruct_effective
from .answers import LENIENT, Answer, answers_equal
from .dialogue import ConversationRecord, RunContext, process_task
from .tasks import Task

MANIFEST_NAME = "manifest.json"
CANDIDATES_NAME = "candidates.jsonl"
CL_NAME = "cl.jsonl"
CO_NAME = "co.jsonl"
TRANSCRIPT_NAME = "transcript.jsonl"


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(", ", ": "))


def append_jsonl(path: Path, obj) -> None:
    with path.open("a", encoding="utf-8") as handle:
        handle.write(dumps_canonical(obj))
        handle.write("\n")


def read_jsonl(path: Path) -> list[dict]:
    out = []
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                out.append(json.loads(line))
    return out


def _ratio(numerator: int, denominator: int) -> str | None:
    if denominator == 0:
        return None
    return str((Decimal(numerator) / Decimal(denominator)).quantize(Decimal("0.000001")))


@dataclass
class Curriculum:
    """The persisted, verified-recoverable conversation sets of one run."""

    run_dir: Path
    manifest: dict
    reports: list[dict]
    cl: list[ConversationRecord]
    co: list[ConversationRecord]

    @property
    def tasks_by_id(self) -> dict[str, Task]:
        return {r["task_id"]: Task.from_json(r["task"]) for r in self.reports}

    def candidate_count(self) -> int:
        return sum(
            1
            for report in self.reports
            for outcome in report.get("strategies", {}).values()
            if outcome["status"] == "candidate"
        )


def load_curriculum(run_dir) -> Curriculum:
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / MANIFEST_NAME).read_text(encoding="utf-8"))
    reports = read_jsonl(run_dir / CANDIDATES_NAME)
    cl = [ConversationRecord.from_json(r) for r in read_jsonl(run_dir / CL_NAME)]
    co = [ConversationRecord.from_json(r) for r in read_jsonl(run_dir / CO_NAME)]
    return Curriculum(run_dir, manifest, reports, cl, co)


def _strategy_counts(reports: list[dict]) -> dict:
    per: dict[str, dict] = {}
    for report in reports:
        for name, outcome in report.get("strategies", {}).items():
            bucket = per.setdefault(
                name,
                {"attempted": 0, "candidates": 0, "cl_kept": 0, "co_kept": 0},
            )
            bucket["attempted"] += 1
            if outcome["status"] == "candidate":
                bucket["candidates"] += 1
                if outcome.get("clarification", {}).get("kept"):
                    bucket["cl_kept"] += 1
                if outcome.get("correction", {}).get("kept"):
                    bucket["co_kept"] += 1
    for bucket in per.values():
        bucket["acc_cl"] = _ratio(bucket["cl_kept"], bucket["candidates"])
        bucket["acc_co"] = _ratio(bucket["co_kept"], bucket["candidates"])
    return per


def _failure_counts(reports: list[dict]) -> dict:
    failures: dict[str, int] = {}

    def bump(key):
        failures[key] = failures.get(key, 0) + 1

    for report in reports:
        if report.get("error"):
            bump("task")
        for outcome in report.get("strategies", {}).values():
            if outcome["status"] in ("error", "ablation-failed"):
                bump(f"strategy:{outcome['status']}")
    return failures


def summarize_counts(reports: list[dict], cl_count: int, co_count: int) -> dict:
    solved = sum(1 for r in reports if r["original_solved"])
    candidates = sum(
        1
        for report in reports
        for outcome in report.get("strategies", {}).values()
        if outcome["status"] == "candidate"
    )
    return {
        "tasks": len(reports),
        "originally_solved": solved,
        "acc_or": _ratio(solved, len(reports)),
        "candidates": candidates,
        "cl": cl_count,
        "co": co_count,
        "per_strategy": _strategy_counts(reports),
        "failures": _failure_counts(reports),
    }


def build_curriculum(
    tasks: list[Task],
    student,
    teacher,
    ctx: RunContext,
    strategies,
    run_dir,
    workers: int = 1,
    resume: bool = False,
    manifest_extra: dict | None = None,
) -> Curriculum:
    """Run the teacher-student pipeline over ``tasks`` into ``run_dir``.

    Tasks run in a bounded worker pool but results are written in task
    order, flushed per task, so an interrupted run can resume by task id.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    candidates_path = run_dir / CANDIDATES_NAME
    cl_path = run_dir / CL_NAME
    co_path = run_dir / CO_NAME

    done_ids: set[str] = set()
    if resume and candidates_path.exists():
        done_ids = {row["task_id"] for row in read_jsonl(candidates_path)}
    else:
        for path in (candidates_path, cl_path, co_path):
            path.write_text("", encoding="utf-8")

    manifest = {
        "tool_version": tool_version,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "models": ctx.models,
        "seeds": ctx.seeds,
        "prompt_pack_hash": ctx.prompt_pack_hash,
        "strategies": list(strategies),
        "status": "running",
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    (run_dir / MANIFEST_NAME).write_text(
        dumps_canonical(manifest) + "\n", encoding="utf-8"
    )

    todo = [t for t in tasks if t.id not in done_ids]

    def work(task):
        return process_task(task, student, teacher, strategies, ctx)

    if workers <= 1:
        results = map(work, todo)
    else:
        executor = ThreadPoolExecutor(max_workers=workers)
        results = executor.map(work, todo)
    try:
        for report in results:
            append_jsonl(candidates_path, report.to_json())
            for outcome in report.strategies.values():
                if outcome.clarification is not None and outcome.clarification.kept:
                    append_jsonl(cl_path, outcome.clarification.to_json())
                if outcome.correction is not None and outcome.correction.kept:
                    append_jsonl(co_path, outcome.correction.to_json())
    finally:
        if workers > 1:
            executor.shutdown(wait=False, cancel_futures=True)

    reports = read_jsonl(candidates_path)
    cl_rows = read_jsonl(cl_path)
    co_rows = read_jsonl(co_path)
    manifest["counts"] = summarize_counts(reports, len(cl_rows), len(co_rows))
    manifest["status"] = "complete"
    manifest["finalized_at"] = datetime.now(timezone.utc).isoformat()
    (run_dir / MANIFEST_NAME).write_text(
        dumps_canonical(manifest) + "\n", encoding="utf-8"
    )
    return load_curriculum(run_dir)


# --- validation ----------------------------------------------------------


@dataclass
class Violation:
    where: str
    problem: str

    def __str__(self) -> str:
        return f"{self.where}: {self.problem}"


def _verdict_ok(stored_verdict: dict | None, answer_json: dict | None, groundtruth) -> bool:
    """Replay a stored correct verdict deterministically.

    Either the stored final answer passes the lenient pre-check against
    the ground truth, or the verdict was decided by the model judge (the
    transcript is the authority for that path).
    """
    if not stored_verdict or stored_verdict.get("value") != "correct":
        return False
    if stored_verdict.get("decided_by") == "model":
        return True
    if answer_json is None:
        return False
    return answers_equal(Answer.from_json(answer_json), groundtruth, LENIENT)


def _wrong_ok(stored_verdict: dict | None) -> bool:
    return bool(stored_verdict) and stored_verdict.get("value") == "wrong"


def _check_reconstruction(base: Task, record_ablation: dict, question: str, table_json: dict, where: str, out: list):
    ablation = AblationRecord.from_json(record_ablation)
    rebuilt_question, rebuilt_table = reconstruct_effective(base, ablation)
    if rebuilt_question != question:
        out.append(Violation(where, "ablation does not reproduce the stored question"))
    if rebuilt_table.to_json() != table_json:
        out.append(Violation(where, "ablation does not reproduce the stored table"))


def validate_curriculum(run_dir) -> list[Violation]:
    """Check every persisted invariant of a run directory."""
    curriculum = load_curriculum(run_dir)
    violations: list[Violation] = []
    tasks: dict[str, Task] = {}
    for report in curriculum.reports:
        where = f"candidates:{report['task_id']}"
        try:
            task = Task.from_json(report["task"])
        except (KeyError, ValueError) as exc:
            violations.append(Violation(where, f"unloadable task: {exc}"))
            continue
        tasks[task.id] = task
        attempt = report.get("original_attempt")
        if report["original_solved"]:
            if not attempt or not _verdict_ok(
                attempt.get("verdict"), attempt.get("answer"), task.groundtruth
            ):
                violations.append(Violation(where, "original attempt is not verifiably correct"))
        for name, outcome in report.get("strategies", {}).items():
            if outcome["status"] != "candidate":
                continue
            swhere = f"{where}:{name}"
            ablated = outcome.get("ablated")
            wrong = outcome.get("wrong_attempt")
            if not ablated or not wrong:
                violations.append(Violation(swhere, "candidate missing ablated task or attempt"))
                continue
            if not _wrong_ok(wrong.get("verdict")):
                violations.append(Violation(swhere, "candidate's ablated attempt is not wrong"))
            _check_reconstruction(
                task, ablated["ablation"], ablated["question"], ablated["table"], swhere, violations
            )
    seen_ids: set[str] = set()
    for scenario, records in (("cl", curriculum.cl), ("co", curriculum.co)):
        for record in records:
            where = f"{scenario}:{record.id}"
            if record.id in seen_ids:
                violations.append(Violation(where, "duplicate record id"))
            seen_ids.add(record.id)
            if not record.kept:
                violations.append(Violation(where, "persisted record not marked kept"))
            base = tasks.get(record.base_task_id)
            if base is None:
                violations.append(Violation(where, "base task missing from candidates.jsonl"))
                continue
            if not _verdict_ok(record.verdict, record.final_answer, base.groundtruth):
                violations.append(Violation(where, "stored verdict does not replay to correct"))
            _check_reconstruction(
                base, record.ablation, record.question, record.table, where, violations
            )
            speakers = [t.speaker for t in record.turns]
            if record.scenario == "clarification":
                if speakers != ["teacher-hint", "student", "simulated-user", "student"]:
                    violations.append(Violation(where, f"bad clarification turn order {speakers}"))
                elif record.clarification_question != record.turns[1].text:
                    violations.append(Violation(where, "q_cl does not match its turn"))
            else:
                if speakers != ["student", "simulated-user", "student"]:
                    violations.append(Violation(where, f"bad correction turn order {speakers}"))
                if record.clarification_question is not None:
                    violations.append(Violation(where, "correction record carries a q_cl"))
    counts = curriculum.manifest.get("counts", {})
    candidate_count = curriculum.candidate_count()
    if len(curriculum.cl) > candidate_count:
        violations.append(Violation("counts", "|Cl| exceeds |C|"))
    if len(curriculum.co) > candidate_count:
        violations.append(Violation("counts", "|Co| exceeds |C|"))
    recount = summarize_counts(curriculum.reports, len(curriculum.cl), len(curriculum.co))
    if counts and counts != recount:
        violations.append(Violation("counts", f"manifest counts stale: {counts} != {recount}"))
    return violations
