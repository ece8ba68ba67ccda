"""Unsupervised evaluation on an existing curriculum, with P/R/F1 metrics.

Positives are the curriculum's ablated tasks (the student should ask);
negatives are original tasks the same student solved without help (it
should answer). The teacher only judges and simulates the user; it never
guides. Three prompting modes: followup, zeroshot, fewshot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ablation import AblatedTask, AblationRecord
from .answers import normalize_answer
from .dialogue import (
    STAGE_ERRORS,
    SCENARIO_CLARIFICATION,
    _ANSWER_LINE_RE,
    _strip_fences,
    Student,
    extract_answer_forms,
    ExtractionFailure,
)
from .extraction import NoJsonFound, Verdict, extract_json_block
from .gateway import ChatMessage
from .store import Curriculum
from .tableprog import extract_program_source, run_program
from .tables import Table, render_table
from .tasks import Task

MODES = ("followup", "zeroshot", "fewshot")

LABEL_POSITIVE = "needs-clarification"
LABEL_NEGATIVE = "solvable"

PREDICTED_ASKED = "asked"
PREDICTED_ANSWERED = "answered"

FEWSHOT_K = 4


class Unclassifiable(ValueError):
    pass


@dataclass(frozen=True)
class Classification:
    action: str  # asked | answered
    payload: str  # question text or answer/program text
    payload_kind: str  # question | answer | program | none
    source: str  # marker | answer-form | heuristic | unclassifiable


def classify_response(text: str) -> Classification:
    """Decide whether a response asks for clarification or answers.

    The structured {"action": ...} marker wins; a program or Answer: line
    classifies as answered; a final line ending in "?" classifies as
    asked; anything else counts as an empty answer (judged wrong).
    """
    try:
        extracted = extract_json_block(text)
    except NoJsonFound:
        extracted = None
    if isinstance(getattr(extracted, "value", None), dict):
        action = str(extracted.value.get("action", "")).strip().lower()
        if action == "clarify":
            question = str(extracted.value.get("question", "")).strip()
            return Classification(PREDICTED_ASKED, question, "question", "marker")
        if action == "answer":
            answer = extracted.value.get("answer", "")
            answer = "" if answer is None else str(answer).strip()
            return Classification(PREDICTED_ANSWERED, answer, "answer", "marker")
    program = extract_program_source(text)
    if program is not None:
        return Classification(PREDICTED_ANSWERED, program, "program", "answer-form")
    prose = _strip_fences(text)
    answers = _ANSWER_LINE_RE.findall(prose)
    if answers:
        return Classification(PREDICTED_ANSWERED, answers[-1].strip(), "answer", "answer-form")
    lines = [line.strip() for line in prose.splitlines() if line.strip()]
    if lines and lines[-1].endswith("?"):
        return Classification(PREDICTED_ASKED, lines[-1], "question", "heuristic")
    return Classification(PREDICTED_ANSWERED, "", "none", "unclassifiable")


@dataclass(frozen=True)
class EvalItem:
    """One benchmark item: a positive (ablated) or negative (original) task."""

    key: str
    label: str
    question: str
    table: Table
    groundtruth: object
    dataset: str
    strategy: str | None = None
    ablated: AblatedTask | None = None  # positives only


@dataclass
class DecisionOutcome:
    key: str
    label: str
    predicted: str
    final_correct: bool
    mode: str
    branch: str  # cl | co | or
    run_label: str = "single"
    strategy: str | None = None
    dataset: str = ""
    classification_source: str = ""
    detail: str = ""

    def to_json(self) -> dict:
        return {
            "key": self.key,
            "label": self.label,
            "predicted": self.predicted,
            "final_correct": self.final_correct,
            "mode": self.mode,
            "branch": self.branch,
            "run_label": self.run_label,
            "strategy": self.strategy,
            "dataset": self.dataset,
            "classification_source": self.classification_source,
            "detail": self.detail,
        }


@dataclass
class EvalConfig:
    mode: str = "followup"
    seed: int = 0
    negatives_limit: int | None = None
    fewshot_examples: list | None = None  # rendered example dicts, set by loader

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")


def positives_from_curriculum(curriculum: Curriculum) -> list[EvalItem]:
    """Unique ablated tasks appearing in Cl or Co, in task order."""
    tasks = curriculum.tasks_by_id
    items: dict[str, EvalItem] = {}
    for record in [*curriculum.cl, *curriculum.co]:
        key = f"{record.base_task_id}:{record.strategy}"
        if key in items:
            continue
        base = tasks[record.base_task_id]
        ablated = AblatedTask(
            base=base,
            question=record.question,
            table=Table.from_json(record.table),
            ablation=AblationRecord.from_json(record.ablation),
        )
        items[key] = EvalItem(
            key=key,
            label=LABEL_POSITIVE,
            question=record.question,
            table=ablated.table,
            groundtruth=base.groundtruth,
            dataset=base.source.dataset,
            strategy=record.strategy,
            ablated=ablated,
        )
    return sorted(items.values(), key=lambda item: item.key)


def negatives_from_curriculum(curriculum: Curriculum, limit: int | None = None) -> list[EvalItem]:
    """Original tasks the student solved: no clarification needed."""
    items = []
    for report in curriculum.reports:
        if not report["original_solved"]:
            continue
        task = Task.from_json(report["task"])
        items.append(
            EvalItem(
                key=task.id,
                label=LABEL_NEGATIVE,
                question=task.question,
                table=task.table,
                groundtruth=task.groundtruth,
                dataset=task.source.dataset,
            )
        )
    if limit is not None:
        items = items[:limit]
    return items


def _judge_payload(classification: Classification, item: EvalItem, teacher) -> tuple[bool, str]:
    """Judge an 'answered' classification payload against the ground truth."""
    if classification.payload_kind == "program":
        result = run_program(classification.payload, item.table)
        if not result.ok:
            return False, f"execution failure: {result.failure.kind}"
        answer = result.value
    elif classification.payload:
        answer = normalize_answer(classification.payload)
    else:
        return False, "empty answer"
    verdict = teacher.judge(item.question, item.table, answer, item.groundtruth)
    return verdict.is_correct, f"judged:{verdict.decided_by}"


def _judge_attempt(attempt, item: EvalItem, teacher) -> bool:
    if attempt.answer is None:
        return False
    verdict = teacher.judge(item.question, item.table, attempt.answer, item.groundtruth)
    attempt.verdict = verdict
    return verdict.is_correct


def _resolve_and_judge(messages, item: EvalItem, user_reply: str, student: Student, teacher) -> tuple[bool, str]:
    resolve = student.pack.render("resolve-after-user", user_response=user_reply)
    followup_messages = list(messages) + [ChatMessage("user", resolve.text)]
    attempt = student.attempt(followup_messages, item.table)
    return _judge_attempt(attempt, item, teacher), attempt.method


def _eval_one(
    item: EvalItem, student: Student, teacher, mode: str, run_label: str, examples_text: str | None
) -> DecisionOutcome:
    pack = student.pack
    if mode == "followup":
        solve = pack.render("solve", table=render_table(item.table), question=item.question)
        first_response = student.ask(list(solve.messages))
        decide = pack.render("followup-decide")
        messages = [
            solve.messages[0],
            ChatMessage("assistant", first_response),
            ChatMessage("user", decide.text),
        ]
        decision_response = student.ask(messages)
        classification = classify_response(decision_response)
        if (
            classification.action == PREDICTED_ANSWERED
            and not classification.payload
            and classification.source == "unclassifiable"
        ):
            # no usable marker: the student keeps its first answer
            try:
                first = extract_answer_forms(first_response, item.table)
                classification = Classification(
                    PREDICTED_ANSWERED,
                    first.program_source or (first.answer.raw_text if first.answer else ""),
                    "program" if first.program_source else "answer",
                    "first-answer",
                )
            except ExtractionFailure:
                pass
        history = messages + [ChatMessage("assistant", decision_response)]
    else:
        if mode == "fewshot":
            bundle = pack.render(
                "decide-fewshot",
                examples=examples_text or "",
                table=render_table(item.table),
                question=item.question,
            )
        else:
            bundle = pack.render(
                "decide-single", table=render_table(item.table), question=item.question
            )
        response = student.ask(list(bundle.messages))
        classification = classify_response(response)
        history = [bundle.messages[0], ChatMessage("assistant", response)]

    outcome = DecisionOutcome(
        key=item.key,
        label=item.label,
        predicted=classification.action,
        final_correct=False,
        mode=mode,
        branch="or" if item.label == LABEL_NEGATIVE else "cl",
        run_label=run_label,
        strategy=item.strategy,
        dataset=item.dataset,
        classification_source=classification.source,
    )
    # once classified, the asked/answered decision stands: completion
    # failures only cost correctness, they never flip the prediction
    try:
        if classification.action == PREDICTED_ASKED:
            if item.label == LABEL_POSITIVE:
                user_reply = teacher.simulate_user(item.ablated, "clarify", classification.payload)
                outcome.branch = "cl"
            else:
                user_reply = pack.render("user-no-missing-info").text
                outcome.branch = "or"
            correct, detail = _resolve_and_judge(history, item, user_reply, student, teacher)
        else:
            if item.label == LABEL_POSITIVE:
                display = classification.payload or "(no answer)"
                user_reply = teacher.simulate_user(item.ablated, "correct", display)
                outcome.branch = "co"
                correct, detail = _resolve_and_judge(history, item, user_reply, student, teacher)
            else:
                outcome.branch = "or"
                correct, detail = _judge_payload(classification, item, teacher)
    except STAGE_ERRORS as exc:
        correct, detail = False, f"completion-failure: {exc}"
    outcome.final_correct = correct
    outcome.detail = detail
    return outcome


def run_eval(
    curriculum: Curriculum,
    student: Student,
    teacher,
    config: EvalConfig,
    negatives: list[EvalItem] | None = None,
) -> list[DecisionOutcome]:
    """Evaluate a student on a curriculum without teacher guidance."""
    positives = positives_from_curriculum(curriculum)
    if negatives is None:
        negatives = negatives_from_curriculum(curriculum, config.negatives_limit)
    items = positives + negatives
    outcomes: list[DecisionOutcome] = []
    if config.mode == "fewshot":
        examples = config.fewshot_examples or []
        orders = [("order-a", examples), ("order-b", list(reversed(examples)))]
        for run_label, ordered in orders:
            examples_text = render_fewshot_examples(ordered)
            for item in items:
                outcomes.append(
                    _safe_eval(item, student, teacher, config.mode, run_label, examples_text)
                )
    else:
        for item in items:
            outcomes.append(_safe_eval(item, student, teacher, config.mode, "single", None))
    return outcomes


def _safe_eval(item, student, teacher, mode, run_label, examples_text) -> DecisionOutcome:
    try:
        return _eval_one(item, student, teacher, mode, run_label, examples_text)
    except STAGE_ERRORS as exc:
        return DecisionOutcome(
            key=item.key,
            label=item.label,
            predicted=PREDICTED_ANSWERED,
            final_correct=False,
            mode=mode,
            branch="or" if item.label == LABEL_NEGATIVE else "co",
            run_label=run_label,
            strategy=item.strategy,
            dataset=item.dataset,
            classification_source="error",
            detail=f"task-failure: {exc}",
        )


def select_fewshot_examples(train_curriculum: Curriculum, k: int = FEWSHOT_K) -> list[dict]:
    """First k eligible train entries, balanced clarify/answer (k//2 each)."""
    half = k // 2
    clarify = []
    for record in train_curriculum.cl:
        if record.scenario != SCENARIO_CLARIFICATION or not record.clarification_question:
            continue
        clarify.append(
            {
                "table": record.table,
                "question": record.question,
                "action": "clarify",
                "payload": record.clarification_question,
            }
        )
        if len(clarify) == half:
            break
    answer = []
    for report in train_curriculum.reports:
        if not report["original_solved"]:
            continue
        task = Task.from_json(report["task"])
        answer.append(
            {
                "table": task.table.to_json(),
                "question": task.question,
                "action": "answer",
                "payload": task.groundtruth.raw_text or task.groundtruth.canonical,
            }
        )
        if len(answer) == half:
            break
    if len(clarify) < half or len(answer) < half:
        raise ValueError(
            f"train curriculum too small for {k} balanced few-shot examples"
        )
    # interleave: clarify, answer, clarify, answer
    out = []
    for pair in zip(clarify, answer):
        out.extend(pair)
    return out


def render_fewshot_examples(examples: list[dict]) -> str:
    blocks = []
    for i, example in enumerate(examples, start=1):
        table = Table.from_json(example["table"])
        if example["action"] == "clarify":
            marker = '{"action": "clarify", "question": ' + _json_str(example["payload"]) + "}"
        else:
            marker = '{"action": "answer", "answer": ' + _json_str(example["payload"]) + "}"
        blocks.append(
            f"### Example {i}\n"
            f"Table:\n{render_table(table)}\n"
            f"Question: {example['question']}\n"
            "Response:\n```json\n" + marker + "\n```"
        )
    return "\n\n".join(blocks)


def _json_str(text: str) -> str:
    import json

    return json.dumps(text, ensure_ascii=False)


# --- metrics --------------------------------------------------------------


@dataclass
class MetricsReport:
    counts: dict
    precision: float | None
    recall: float | None
    f1: float | None
    acc_or: float | None
    acc_cl: float | None
    acc_co: float | None
    by_strategy: dict = field(default_factory=dict)
    by_dataset: dict = field(default_factory=dict)
    runs: dict = field(default_factory=dict)  # fewshot: per-order raw reports

    def to_json(self) -> dict:
        data = {
            "counts": self.counts,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "acc_or": self.acc_or,
            "acc_cl": self.acc_cl,
            "acc_co": self.acc_co,
            "by_strategy": self.by_strategy,
            "by_dataset": self.by_dataset,
        }
        if self.runs:
            data["runs"] = self.runs
        return data


def _safe_div(numerator: int, denominator: int) -> float | None:
    if denominator == 0:
        return None
    return numerator / denominator


def _basic_metrics(outcomes: list[DecisionOutcome]) -> dict:
    tp = sum(1 for o in outcomes if o.label == LABEL_POSITIVE and o.predicted == PREDICTED_ASKED)
    fp = sum(1 for o in outcomes if o.label == LABEL_NEGATIVE and o.predicted == PREDICTED_ASKED)
    fn = sum(1 for o in outcomes if o.label == LABEL_POSITIVE and o.predicted == PREDICTED_ANSWERED)
    tn = sum(1 for o in outcomes if o.label == LABEL_NEGATIVE and o.predicted == PREDICTED_ANSWERED)
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    cl_hits = sum(
        1
        for o in outcomes
        if o.label == LABEL_POSITIVE and o.predicted == PREDICTED_ASKED and o.final_correct
    )
    co_hits = sum(
        1
        for o in outcomes
        if o.label == LABEL_POSITIVE and o.predicted == PREDICTED_ANSWERED and o.final_correct
    )
    or_hits = sum(1 for o in outcomes if o.label == LABEL_NEGATIVE and o.final_correct)
    negatives = sum(1 for o in outcomes if o.label == LABEL_NEGATIVE)
    return {
        "counts": {"TP": tp, "FP": fp, "FN": fn, "TN": tn},
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "acc_cl": _safe_div(cl_hits, tp),
        "acc_co": _safe_div(co_hits, fn),
        "acc_or": _safe_div(or_hits, negatives),
    }


def _average(a: float | None, b: float | None) -> float | None:
    if a is None or b is None:
        return None
    return (a + b) / 2


def compute_metrics(outcomes: list[DecisionOutcome]) -> MetricsReport:
    """Confusion counts, P/R/F1 over the clarify decision, and accuracies.

    Undefined ratios are reported as None (never 0). Fewshot outcomes
    carry two run labels; each order is reported raw and the headline
    numbers are their average.
    """
    if not outcomes:
        raise ValueError("no outcomes to score")
    run_labels = sorted({o.run_label for o in outcomes})
    if len(run_labels) > 1:
        per_run = {
            label: _basic_metrics([o for o in outcomes if o.run_label == label])
            for label in run_labels
        }
        first, second = (per_run[label] for label in run_labels[:2])
        merged = {
            "counts": {
                key: first["counts"][key] + second["counts"][key] for key in first["counts"]
            },
            "precision": _average(first["precision"], second["precision"]),
            "recall": _average(first["recall"], second["recall"]),
            "f1": _average(first["f1"], second["f1"]),
            "acc_cl": _average(first["acc_cl"], second["acc_cl"]),
            "acc_co": _average(first["acc_co"], second["acc_co"]),
            "acc_or": _average(first["acc_or"], second["acc_or"]),
        }
        runs = per_run
    else:
        merged = _basic_metrics(outcomes)
        runs = {}
    report = MetricsReport(
        counts=merged["counts"],
        precision=merged["precision"],
        recall=merged["recall"],
        f1=merged["f1"],
        acc_or=merged["acc_or"],
        acc_cl=merged["acc_cl"],
        acc_co=merged["acc_co"],
        runs=runs,
    )
    for key, selector in (
        ("by_strategy", lambda o: o.strategy),
        ("by_dataset", lambda o: o.dataset),
    ):
        groups: dict[str, list[DecisionOutcome]] = {}
        for outcome in outcomes:
            group = selector(outcome)
            if group:
                groups.setdefault(group, []).append(outcome)
        getattr(report, key).update(
            {name: _basic_metrics(members) for name, members in sorted(groups.items())}
        )
    return report


def format_report(report: MetricsReport) -> str:
    """Compact text table: P/R/F1 plus the three accuracy columns."""

    def fmt(value):
        return "*" if value is None else f"{value:.3f}"

    lines = [
        "metric    | value",
        "----------+------",
        f"P         | {fmt(report.precision)}",
        f"R         | {fmt(report.recall)}",
        f"F1        | {fmt(report.f1)}",
        f"Acc_Or    | {fmt(report.acc_or)}",
        f"Acc_Cl    | {fmt(report.acc_cl)}",
        f"Acc_Co    | {fmt(report.acc_co)}",
        "counts    | "
        + " ".join(f"{k}={v}" for k, v in sorted(report.counts.items())),
    ]
    return "\n".join(lines)
