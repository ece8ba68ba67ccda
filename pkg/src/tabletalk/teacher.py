"""Teacher-side behaviors: judge, ablate, hint, and simulate the user.

The teacher model has ground-truth access. Every output destined for the
student passes a leakage guard so the ground truth is never handed over
(hints strictly; user responses unless the removed information itself is
the answer, which a correction legitimately reveals).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .ablation import (
    STRATEGY_QUESTION,
    AblatedTask,
    AblationError,
    InfoPiece,
    RephraseUnchanged,
    apply_table_ablation,
    make_question_ablation,
    resolve_question_span,
    resolve_table_locator,
    span_absent,
)
from .answers import LENIENT, Answer, answers_equal, normalize_answer
from .extraction import NoJsonFound, NoVerdict, Verdict, extract_json_block, extract_verdict
from .gateway import ChatMessage
from .tables import Table, render_table
from .tasks import Task

MAX_REPHRASE_ATTEMPTS = 3
MAX_LEAK_RETRIES = 3


class JudgeFailure(RuntimeError):
    """The judge produced no verdict even after a reprompt."""


class PieceExtractionFailure(RuntimeError):
    """The teacher returned no usable information pieces."""


class GroundTruthLeak(RuntimeError):
    """A student-facing teacher output kept containing the ground truth."""


def _light_normalize(text: str) -> str:
    out = text.lower()
    out = re.sub(r"(?<=\d),(?=\d{3}(?!\d))", "", out)
    out = re.sub(r"[$€£¥]", "", out)
    return re.sub(r"\s+", " ", out)


def _answer_tokens(answer: Answer) -> list[str]:
    items = answer.items if answer.kind == "list" else (answer,)
    tokens = []
    for item in items:
        canonical = item.canonical.strip()
        if canonical:
            tokens.append(canonical)
    return tokens


def contains_answer(text: str, answer: Answer) -> bool:
    """Word-boundary containment of the ground truth in ``text``."""
    haystack = _light_normalize(text)
    for token in _answer_tokens(answer):
        pattern = r"(?<!\w)" + re.escape(_light_normalize(token).strip()) + r"(?!\w)"
        if re.search(pattern, haystack):
            return True
    return False


def piece_contents(piece: InfoPiece, base: Task) -> list[str]:
    """The concrete removed content a piece stands for."""
    if piece.origin == "question":
        return [piece.span or piece.description]
    if piece.origin == "table-value":
        return [base.table.cell(piece.column, piece.row).text]
    values = [c.text for c in base.table.column_values(piece.column) if not c.is_empty]
    return [piece.column, *values]


def removed_info(ablated: AblatedTask) -> list[dict]:
    """Self-contained snapshot of the ablated information I, for records."""
    return [
        {
            "origin": piece.origin,
            "description": piece.description,
            "values": piece_contents(piece, ablated.base),
        }
        for piece in ablated.ablation.pieces
    ]


def pieces_contain_answer(ablated: AblatedTask) -> bool:
    for piece in ablated.ablation.pieces:
        for value in piece_contents(piece, ablated.base):
            if value and contains_answer(value, ablated.base.groundtruth):
                return True
    return False


def _describe_pieces(pieces) -> str:
    return "\n".join(f"- {p.description}" for p in pieces)


def _describe_removed(ablated: AblatedTask) -> str:
    lines = []
    for piece in ablated.ablation.pieces:
        values = piece_contents(piece, ablated.base)
        if piece.origin == "question":
            lines.append(f"- from the question: \"{values[0]}\"")
        elif piece.origin == "table-value":
            lines.append(
                f"- the value of column '{piece.column}' in row {piece.row + 1}: {values[0]}"
            )
        else:
            shown = ", ".join(values[1:]) or "(no values)"
            lines.append(f"- the whole table column '{piece.column}' with values: {shown}")
    return "\n".join(lines)


def _parse_piece_descriptions(value) -> list[str]:
    if isinstance(value, dict):
        value = [value]
    if not isinstance(value, list):
        return []
    out = []
    for entry in value:
        if isinstance(entry, str) and entry.strip():
            out.append(entry.strip())
        elif isinstance(entry, dict):
            for _key, description in sorted(entry.items()):
                if isinstance(description, str) and description.strip():
                    out.append(description.strip())
    return out


@dataclass
class PieceResolution:
    pieces: list[InfoPiece]
    dropped: int  # descriptions that bound to nothing and were discarded


class Teacher:
    """The teacher-side role: judge answers, remove information, hint,
    and stand in for the user."""

    def __init__(self, gateway, pack, judge_mode: str = LENIENT):
        self.gateway = gateway
        self.pack = pack
        self.judge_mode = judge_mode

    # -- judging ---------------------------------------------------------

    def judge(self, question: str, table: Table, candidate, groundtruth) -> Verdict:
        """Judge a candidate answer, cheap deterministic pre-check first."""
        candidate = normalize_answer(candidate)
        groundtruth = normalize_answer(groundtruth)
        if answers_equal(candidate, groundtruth, self.judge_mode):
            return Verdict(
                "correct",
                analysis="matches the ground truth",
                comparison_mode=self.judge_mode,
                decided_by="pre-check",
            )
        bundle = self.pack.render(
            "judge",
            question=question,
            table=render_table(table),
            output=candidate.raw_text or candidate.canonical,
            solution=groundtruth.raw_text or groundtruth.canonical,
        )
        messages = list(bundle.messages)
        response = self.gateway.complete_chat(messages)
        try:
            verdict = extract_verdict(response)
        except NoVerdict:
            messages = messages + [
                ChatMessage("assistant", response),
                ChatMessage("user", self.pack.render("reprompt-json").text),
            ]
            response = self.gateway.complete_chat(messages)
            try:
                verdict = extract_verdict(response)
            except NoVerdict as exc:
                raise JudgeFailure(f"no verdict after reprompt: {response[:200]!r}") from exc
        return Verdict(verdict.value, verdict.analysis, self.judge_mode, "model")

    # -- identifying necessary information --------------------------------

    def identify_pieces(self, task: Task, solution: str, target: str) -> PieceResolution:
        """Ask the teacher which information the solution depends on.

        ``target`` is "question" or "table". Descriptions that cannot be
        bound to a concrete span/column/cell are dropped and counted.
        """
        if target == "question":
            bundle = self.pack.render(
                "ablate-question", question=task.question, solution=solution
            )
        elif target == "table":
            bundle = self.pack.render(
                "ablate-table",
                table=render_table(task.table),
                question=task.question,
                solution=solution,
            )
        else:
            raise ValueError(f"bad target {target!r}")
        messages = list(bundle.messages)
        response = self.gateway.complete_chat(messages)
        try:
            extracted = extract_json_block(response)
        except NoJsonFound:
            messages = messages + [
                ChatMessage("assistant", response),
                ChatMessage("user", self.pack.render("reprompt-json").text),
            ]
            response = self.gateway.complete_chat(messages)
            try:
                extracted = extract_json_block(response)
            except NoJsonFound as exc:
                raise PieceExtractionFailure(
                    f"no JSON pieces after reprompt: {response[:200]!r}"
                ) from exc
        descriptions = _parse_piece_descriptions(extracted.value)[:3]
        if not descriptions:
            raise PieceExtractionFailure(f"teacher returned no piece descriptions: {extracted.value!r}")
        pieces: list[InfoPiece] = []
        dropped = 0
        for description in descriptions:
            if target == "question":
                span = resolve_question_span(description, task.question)
                if span is None:
                    dropped += 1
                    continue
                pieces.append(InfoPiece(description, "question", span=span))
            else:
                located = resolve_table_locator(description, task.table)
                if located is None:
                    dropped += 1
                    continue
                origin, column, row = located
                pieces.append(InfoPiece(description, origin, column=column, row=row))
        return PieceResolution(pieces, dropped)

    # -- applying ablations ------------------------------------------------

    def ablate(self, task: Task, pieces, strategy: str) -> AblatedTask:
        """Produce the ablated task T minus I for one strategy.

        Table strategies apply locators directly. Question rephrasing asks
        the teacher for q' and verifies no piece span survives; retries
        are stateless, and after MAX_REPHRASE_ATTEMPTS the candidate is
        discarded via RephraseUnchanged.
        """
        if strategy != STRATEGY_QUESTION:
            return apply_table_ablation(task, pieces, strategy)
        question_pieces = [p for p in pieces if p.origin == "question"]
        if not question_pieces:
            raise AblationError("no question-origin pieces to rephrase away")
        bundle = self.pack.render(
            "rephrase-question",
            question=task.question,
            pieces=_describe_pieces(question_pieces),
        )
        last = ""
        for _attempt in range(MAX_REPHRASE_ATTEMPTS):
            response = self.gateway.complete_chat(list(bundle.messages))
            rephrased = response.strip().splitlines()[0].strip() if response.strip() else ""
            rephrased = rephrased.strip('"')
            last = rephrased
            if not rephrased or rephrased == task.question:
                continue
            if all(span_absent(p.span, rephrased) for p in question_pieces):
                return make_question_ablation(task, question_pieces, rephrased)
        raise RephraseUnchanged(
            f"piece spans survive after {MAX_REPHRASE_ATTEMPTS} attempts: {last!r}"
        )

    # -- simulating the user ------------------------------------------------

    def simulate_user(self, ablated: AblatedTask, kind: str, student_turn: str) -> str:
        """Simulate the user's reply carrying the removed information.

        kind "clarify" answers the student's clarification question; kind
        "correct" volunteers a correction of the student's wrong answer.
        """
        if kind == "clarify":
            bundle = self.pack.render(
                "simulate-user-clarify",
                question=ablated.ablation.original_question,
                pieces=_describe_removed(ablated),
                clarification=student_turn,
            )
        elif kind == "correct":
            bundle = self.pack.render(
                "simulate-user-correct",
                question=ablated.ablation.original_question,
                pieces=_describe_removed(ablated),
                wrong_answer=student_turn,
            )
        else:
            raise ValueError(f"bad kind {kind!r}")
        exempt = pieces_contain_answer(ablated)
        for _attempt in range(MAX_LEAK_RETRIES):
            response = self.gateway.complete_chat(list(bundle.messages))
            if exempt or not contains_answer(response, ablated.base.groundtruth):
                return response
        raise GroundTruthLeak("simulated user response kept leaking the ground truth")

    # -- hints ---------------------------------------------------------------

    def hint(self, ablated: AblatedTask) -> str:
        """A hint naming the category of missing information, answer-free."""
        bundle = self.pack.render(
            "hint",
            question=ablated.question,
            table=render_table(ablated.table),
            pieces=_describe_pieces(ablated.ablation.pieces),
        )
        for _attempt in range(MAX_LEAK_RETRIES):
            response = self.gateway.complete_chat(list(bundle.messages))
            if not contains_answer(response, ablated.base.groundtruth):
                return response
        raise GroundTruthLeak("hint kept containing the ground-truth answer")
