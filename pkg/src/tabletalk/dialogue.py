"""Student solve loop and the clarification/correction conversation flows.

The student answers table questions (preferably as a table program); the
teacher verifies, ablates, hints, and simulates the user. Candidates are
tasks the student solved originally but fails after ablation; verified
recoverable conversations land in the Cl and Co curriculum sets.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .ablation import AblatedTask, AblationError, RephraseUnchanged, STRATEGIES
from .answers import Answer, normalize_answer
from .extraction import Verdict
from .gateway import ChatMessage, ScriptMiss, TransportError
from .tableprog import ExecResult, extract_program_source, run_program
from .tasks import Task
from .teacher import (
    GroundTruthLeak,
    JudgeFailure,
    PieceExtractionFailure,
    Teacher,
    removed_info,
)
from .tables import Table, render_table

SPEAKER_STUDENT = "student"
SPEAKER_USER = "simulated-user"
SPEAKER_HINT = "teacher-hint"

SCENARIO_CLARIFICATION = "clarification"
SCENARIO_CORRECTION = "correction"

_SCRIPT_TAGS = ("python", "py", "")
_ANSWER_LINE_RE = re.compile(r"^\s*answer\s*:\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE)


class ExtractionFailure(RuntimeError):
    """No answer form found in the student response, even after a reprompt."""


STAGE_ERRORS = (
    ExtractionFailure,
    JudgeFailure,
    PieceExtractionFailure,
    GroundTruthLeak,
    RephraseUnchanged,
    AblationError,
    ScriptMiss,
    TransportError,
)


@dataclass(frozen=True)
class Turn:
    speaker: str
    text: str

    def to_json(self) -> dict:
        return {"speaker": self.speaker, "text": self.text}

    @classmethod
    def from_json(cls, data: dict) -> "Turn":
        return cls(data["speaker"], data["text"])


@dataclass
class StudentAttempt:
    """One student answer attempt with its extraction and verdict."""

    response: str
    method: str  # tableprog | script | answer-line | last-line
    answer: Answer | None
    program_source: str | None = None
    execution: ExecResult | None = None
    verdict: Verdict | None = None

    @property
    def answer_display(self) -> str:
        if self.answer is not None:
            return self.answer.raw_text or self.answer.canonical
        if self.execution is not None and self.execution.failure is not None:
            failure = self.execution.failure
            return f"(execution failure: {failure.kind}: {failure.message})"
        return "(no answer)"

    def to_json(self) -> dict:
        data: dict = {"response": self.response, "method": self.method}
        if self.answer is not None:
            data["answer"] = self.answer.to_json()
        if self.program_source is not None:
            data["program"] = self.program_source
        if self.execution is not None:
            data["execution"] = self.execution.to_json()
        if self.verdict is not None:
            data["verdict"] = self.verdict.to_json()
        return data


def _strip_fences(text: str) -> str:
    return re.sub(r"```.*?```", " ", text, flags=re.DOTALL)


def extract_answer_forms(text: str, table: Table, sandbox=None) -> StudentAttempt:
    """Pull the student's answer out of a response.

    Precedence: a ```tableprog program (executed on the table), then a
    fenced script (run in the sandbox when one is configured), then an
    "Answer:" line, then the last non-empty line outside fences.
    """
    program = extract_program_source(text)
    if program is not None:
        result = run_program(program, table)
        answer = result.value if result.ok else None
        return StudentAttempt(text, "tableprog", answer, program, result)
    if sandbox is not None:
        from .extraction import iter_fenced_blocks

        for tag, body, _s, _e in iter_fenced_blocks(text):
            if tag in _SCRIPT_TAGS and body.strip():
                result = sandbox.run(body.strip(), table)
                answer = result.value if result.ok else None
                return StudentAttempt(text, "script", answer, body.strip(), result)
    prose = _strip_fences(text)
    matches = _ANSWER_LINE_RE.findall(prose)
    if matches:
        return StudentAttempt(text, "answer-line", normalize_answer(matches[-1]))
    lines = [line.strip() for line in prose.splitlines() if line.strip()]
    if lines:
        return StudentAttempt(text, "last-line", normalize_answer(lines[-1]))
    raise ExtractionFailure("response contains no answer form")


@dataclass
class Student:
    """The student gateway plus the answer-extraction policy."""

    gateway: object
    pack: object
    sandbox: object = None

    @property
    def name(self) -> str:
        return self.gateway.name

    def ask(self, messages) -> str:
        return self.gateway.complete_chat(messages)

    def attempt(self, messages, table: Table) -> StudentAttempt:
        """One chat completion plus extraction; reprompts once if needed."""
        response = self.ask(messages)
        try:
            return extract_answer_forms(response, table, self.sandbox)
        except ExtractionFailure:
            retry = list(messages) + [
                ChatMessage("assistant", response if response.strip() else "(empty)"),
                ChatMessage("user", self.pack.render("reprompt-answer").text),
            ]
            response = self.ask(retry)
            return extract_answer_forms(response, table, self.sandbox)


def solve_task(question: str, table: Table, groundtruth, student: Student, teacher: Teacher) -> StudentAttempt:
    """Prompt the student once, extract, execute, and judge the answer."""
    bundle = student.pack.render("solve", table=render_table(table), question=question)
    attempt = student.attempt(list(bundle.messages), table)
    if attempt.answer is not None:
        attempt.verdict = teacher.judge(question, table, attempt.answer, groundtruth)
    else:
        failure = attempt.execution.failure
        attempt.verdict = Verdict(
            "wrong",
            analysis=f"execution failure: {failure.kind}: {failure.message}",
            comparison_mode=teacher.judge_mode,
            decided_by="execution-failure",
        )
    return attempt


@dataclass(frozen=True)
class Candidate:
    """An ablated task the student failed: potentially clarifiable/correctable."""

    ablated: AblatedTask
    wrong_attempt: StudentAttempt

    @property
    def strategy(self) -> str:
        return self.ablated.ablation.strategy


@dataclass
class ConversationRecord:
    id: str
    base_task_id: str
    scenario: str
    strategy: str
    ablation: dict
    question: str
    table: dict
    turns: list[Turn]
    removed_info: list[dict]
    final_answer: dict | None
    verdict: dict | None
    kept: bool
    models: dict
    seeds: dict
    prompt_pack_hash: str
    clarification_question: str | None = None
    failure_stage: str | None = None

    def to_json(self) -> dict:
        data = {
            "id": self.id,
            "base_task_id": self.base_task_id,
            "scenario": self.scenario,
            "strategy": self.strategy,
            "ablation": self.ablation,
            "question": self.question,
            "table": self.table,
            "turns": [t.to_json() for t in self.turns],
            "removed_info": self.removed_info,
            "final_answer": self.final_answer,
            "verdict": self.verdict,
            "kept": self.kept,
            "models": self.models,
            "seeds": self.seeds,
            "prompt_pack_hash": self.prompt_pack_hash,
        }
        if self.clarification_question is not None:
            data["clarification_question"] = self.clarification_question
        if self.failure_stage is not None:
            data["failure_stage"] = self.failure_stage
        return data

    @classmethod
    def from_json(cls, data: dict) -> "ConversationRecord":
        return cls(
            id=data["id"],
            base_task_id=data["base_task_id"],
            scenario=data["scenario"],
            strategy=data["strategy"],
            ablation=data["ablation"],
            question=data["question"],
            table=data["table"],
            turns=[Turn.from_json(t) for t in data["turns"]],
            removed_info=data["removed_info"],
            final_answer=data.get("final_answer"),
            verdict=data.get("verdict"),
            kept=data["kept"],
            models=data["models"],
            seeds=data["seeds"],
            prompt_pack_hash=data["prompt_pack_hash"],
            clarification_question=data.get("clarification_question"),
            failure_stage=data.get("failure_stage"),
        )


@dataclass
class RunContext:
    """Identity stamped onto every record of one curriculum run."""

    models: dict
    seeds: dict
    prompt_pack_hash: str


def _record_shell(candidate: Candidate, scenario: str, ctx: RunContext) -> ConversationRecord:
    ablated = candidate.ablated
    return ConversationRecord(
        id=f"{ablated.task_id}:{candidate.strategy}:{scenario}",
        base_task_id=ablated.task_id,
        scenario=scenario,
        strategy=candidate.strategy,
        ablation=ablated.ablation.to_json(),
        question=ablated.question,
        table=ablated.table.to_json(),
        turns=[],
        removed_info=removed_info(ablated),
        final_answer=None,
        verdict=None,
        kept=False,
        models=dict(ctx.models),
        seeds=dict(ctx.seeds),
        prompt_pack_hash=ctx.prompt_pack_hash,
    )


def run_clarification_flow(
    candidate: Candidate, student: Student, teacher: Teacher, ctx: RunContext
) -> ConversationRecord:
    """hint -> student asks q_cl -> simulated user answers -> student re-solves.

    The record is kept for Cl only when the final answer is judged
    correct; any stage failure produces a non-kept record with the stage
    logged.
    """
    record = _record_shell(candidate, SCENARIO_CLARIFICATION, ctx)
    ablated = candidate.ablated
    stage = "hint"
    try:
        hint = teacher.hint(ablated)
        record.turns.append(Turn(SPEAKER_HINT, hint))

        stage = "clarification-question"
        ask_bundle = student.pack.render(
            "ask-clarification",
            table=render_table(ablated.table),
            question=ablated.question,
            hint=hint,
        )
        q_cl = student.ask(list(ask_bundle.messages)).strip()
        if not q_cl:
            raise ExtractionFailure("empty clarification question")
        record.turns.append(Turn(SPEAKER_STUDENT, q_cl))
        record.clarification_question = q_cl

        stage = "simulate-user"
        user_reply = teacher.simulate_user(ablated, "clarify", q_cl)
        record.turns.append(Turn(SPEAKER_USER, user_reply))

        stage = "re-solve"
        resolve = student.pack.render("resolve-after-user", user_response=user_reply)
        messages = [
            ask_bundle.messages[0],
            ChatMessage("assistant", q_cl),
            ChatMessage("user", resolve.text),
        ]
        attempt = student.attempt(messages, ablated.table)
        record.turns.append(Turn(SPEAKER_STUDENT, attempt.response))

        stage = "judge"
        if attempt.answer is not None:
            verdict = teacher.judge(
                ablated.question, ablated.table, attempt.answer, ablated.groundtruth
            )
        else:
            failure = attempt.execution.failure
            verdict = Verdict(
                "wrong",
                analysis=f"execution failure: {failure.kind}: {failure.message}",
                comparison_mode=teacher.judge_mode,
                decided_by="execution-failure",
            )
        attempt.verdict = verdict
        record.final_answer = attempt.answer.to_json() if attempt.answer else None
        record.verdict = verdict.to_json()
        record.kept = verdict.is_correct
    except STAGE_ERRORS as exc:
        record.failure_stage = stage
        record.verdict = Verdict("wrong", analysis=f"{stage}: {exc}").to_json()
        record.kept = False
    return record


def run_correction_flow(
    candidate: Candidate, student: Student, teacher: Teacher, ctx: RunContext
) -> ConversationRecord:
    """wrong answer -> simulated user corrects -> student re-solves."""
    record = _record_shell(candidate, SCENARIO_CORRECTION, ctx)
    ablated = candidate.ablated
    wrong = candidate.wrong_attempt
    record.turns.append(Turn(SPEAKER_STUDENT, wrong.response))
    stage = "simulate-user"
    try:
        user_reply = teacher.simulate_user(ablated, "correct", wrong.answer_display)
        record.turns.append(Turn(SPEAKER_USER, user_reply))

        stage = "re-solve"
        solve_bundle = student.pack.render(
            "solve", table=render_table(ablated.table), question=ablated.question
        )
        resolve = student.pack.render("resolve-after-user", user_response=user_reply)
        messages = [
            solve_bundle.messages[0],
            ChatMessage("assistant", wrong.response),
            ChatMessage("user", resolve.text),
        ]
        attempt = student.attempt(messages, ablated.table)
        record.turns.append(Turn(SPEAKER_STUDENT, attempt.response))

        stage = "judge"
        if attempt.answer is not None:
            verdict = teacher.judge(
                ablated.question, ablated.table, attempt.answer, ablated.groundtruth
            )
        else:
            failure = attempt.execution.failure
            verdict = Verdict(
                "wrong",
                analysis=f"execution failure: {failure.kind}: {failure.message}",
                comparison_mode=teacher.judge_mode,
                decided_by="execution-failure",
            )
        attempt.verdict = verdict
        record.final_answer = attempt.answer.to_json() if attempt.answer else None
        record.verdict = verdict.to_json()
        record.kept = verdict.is_correct
    except STAGE_ERRORS as exc:
        record.failure_stage = stage
        record.verdict = Verdict("wrong", analysis=f"{stage}: {exc}").to_json()
        record.kept = False
    return record


@dataclass
class StrategyOutcome:
    status: str  # candidate | not-broken | no-pieces | ablation-failed | error
    pieces_dropped: int = 0
    detail: str | None = None
    ablated: AblatedTask | None = None
    wrong_attempt: StudentAttempt | None = None
    clarification: ConversationRecord | None = None
    correction: ConversationRecord | None = None

    def to_json(self) -> dict:
        data: dict = {"status": self.status, "pieces_dropped": self.pieces_dropped}
        if self.detail:
            data["detail"] = self.detail
        if self.ablated is not None:
            data["ablated"] = self.ablated.to_json()
        if self.wrong_attempt is not None:
            data["wrong_attempt"] = self.wrong_attempt.to_json()
        if self.clarification is not None:
            data["clarification"] = {
                "record_id": self.clarification.id,
                "kept": self.clarification.kept,
                "record": self.clarification.to_json(),
            }
        if self.correction is not None:
            data["correction"] = {
                "record_id": self.correction.id,
                "kept": self.correction.kept,
                "record": self.correction.to_json(),
            }
        return data


@dataclass
class TaskReport:
    """Everything that happened to one base task; one line of candidates.jsonl."""

    task: Task
    original_attempt: StudentAttempt | None
    original_solved: bool
    strategies: dict = field(default_factory=dict)
    error: str | None = None

    def to_json(self) -> dict:
        data: dict = {
            "task_id": self.task.id,
            "task": self.task.to_json(),
            "original_solved": self.original_solved,
        }
        if self.original_attempt is not None:
            data["original_attempt"] = self.original_attempt.to_json()
        if self.strategies:
            data["strategies"] = {
                name: outcome.to_json() for name, outcome in sorted(self.strategies.items())
            }
        if self.error:
            data["error"] = self.error
        return data


def build_candidate_set(
    tasks, student: Student, teacher: Teacher, strategies, ctx: RunContext
) -> tuple[list[Candidate], list[TaskReport]]:
    """Candidates (ablated task + wrong answer) across a task list.

    A task enters the candidate set only when the student solved the
    original but failed the ablated variant; per-stage outcomes for
    every task come back in the reports.
    """
    reports = [
        process_task(task, student, teacher, strategies, ctx, run_flows=False)
        for task in tasks
    ]
    candidates = [
        Candidate(outcome.ablated, outcome.wrong_attempt)
        for report in reports
        for _name, outcome in sorted(report.strategies.items())
        if outcome.status == "candidate"
    ]
    return candidates, reports


def process_task(
    task: Task,
    student: Student,
    teacher: Teacher,
    strategies,
    ctx: RunContext,
    run_flows: bool = True,
) -> TaskReport:
    """Solve, ablate per strategy, and run both flows on every candidate."""
    for strategy in strategies:
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
    try:
        original = solve_task(task.question, task.table, task.groundtruth, student, teacher)
    except STAGE_ERRORS as exc:
        return TaskReport(task, None, False, error=f"original-solve: {exc}")
    report = TaskReport(task, original, original.verdict.is_correct)
    if not report.original_solved:
        return report
    solution = original.program_source or original.answer_display
    pieces_cache: dict[str, object] = {}
    for strategy in strategies:
        target = "question" if strategy == "question-rephrase" else "table"
        outcome = StrategyOutcome(status="error")
        report.strategies[strategy] = outcome
        try:
            if target not in pieces_cache:
                pieces_cache[target] = teacher.identify_pieces(task, solution, target)
            resolution = pieces_cache[target]
            outcome.pieces_dropped = resolution.dropped
            try:
                ablated = teacher.ablate(task, resolution.pieces, strategy)
            except (RephraseUnchanged, AblationError) as exc:
                outcome.status = "ablation-failed"
                outcome.detail = str(exc)
                continue
            outcome.ablated = ablated
            attempt = solve_task(
                ablated.question, ablated.table, ablated.groundtruth, student, teacher
            )
            outcome.wrong_attempt = attempt
            if attempt.verdict.is_correct:
                outcome.status = "not-broken"
                continue
            outcome.status = "candidate"
            if run_flows:
                candidate = Candidate(ablated, attempt)
                outcome.clarification = run_clarification_flow(candidate, student, teacher, ctx)
                outcome.correction = run_correction_flow(candidate, student, teacher, ctx)
        except STAGE_ERRORS as exc:
            outcome.status = "error"
            outcome.detail = str(exc)
    return report
