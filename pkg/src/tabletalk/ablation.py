"""Information-removal records and their pure application.

An ablation removes necessary information from a task: whole table
columns, individual cell values, or a detail of the question (by
rephrasing). The record stores exactly what was removed so the effective
task can be reconstructed byte-for-byte from the base task.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .tables import Table, TableDiff, apply_diff, diff_tables
from .tasks import Task

STRATEGY_QUESTION = "question-rephrase"
STRATEGY_COLUMN = "table-column"
STRATEGY_VALUE = "table-value"
STRATEGIES = (STRATEGY_QUESTION, STRATEGY_COLUMN, STRATEGY_VALUE)

ORIGIN_QUESTION = "question"
ORIGIN_COLUMN = "table-column"
ORIGIN_VALUE = "table-value"

_STOPWORDS = {
    "the", "a", "an", "of", "in", "on", "for", "to", "and", "or", "is",
    "was", "were", "what", "which", "how", "who", "from", "by", "at",
    "that", "this", "its", "their", "as", "with", "question", "year",
    "value", "column", "table", "information", "piece",
}


class AblationError(ValueError):
    pass


class RephraseUnchanged(AblationError):
    """The teacher could not produce a rephrasing free of all piece spans."""


@dataclass(frozen=True)
class InfoPiece:
    """One necessary piece of information identified by the teacher."""

    description: str
    origin: str  # question | table-column | table-value
    column: str | None = None
    row: int | None = None
    span: str | None = None  # question origin: the exact question substring

    def __post_init__(self):
        if self.origin not in (ORIGIN_QUESTION, ORIGIN_COLUMN, ORIGIN_VALUE):
            raise ValueError(f"bad origin {self.origin!r}")
        if self.origin == ORIGIN_COLUMN and self.column is None:
            raise ValueError("table-column piece needs a column locator")
        if self.origin == ORIGIN_VALUE and (self.column is None or self.row is None):
            raise ValueError("table-value piece needs a (column, row) locator")
        if self.origin == ORIGIN_QUESTION and not self.span:
            raise ValueError("question piece needs a span")

    def to_json(self) -> dict:
        data: dict = {"description": self.description, "origin": self.origin}
        if self.column is not None:
            data["column"] = self.column
        if self.row is not None:
            data["row"] = self.row
        if self.span is not None:
            data["span"] = self.span
        return data

    @classmethod
    def from_json(cls, data: dict) -> "InfoPiece":
        return cls(
            description=data["description"],
            origin=data["origin"],
            column=data.get("column"),
            row=data.get("row"),
            span=data.get("span"),
        )


@dataclass(frozen=True)
class AblationRecord:
    """What was removed and how; applying it to the base reproduces T minus I."""

    strategy: str
    pieces: tuple[InfoPiece, ...]
    original_question: str
    rephrased_question: str | None = None
    table_diff: TableDiff | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"bad strategy {self.strategy!r}")
        if not self.pieces:
            raise ValueError("ablation record needs at least one piece")
        if self.strategy == STRATEGY_QUESTION:
            if not self.rephrased_question or self.table_diff is not None:
                raise ValueError("question strategy carries a rephrasing and no table diff")
        else:
            if self.rephrased_question is not None or self.table_diff is None:
                raise ValueError("table strategies carry a table diff and no rephrasing")

    def to_json(self) -> dict:
        data: dict = {
            "strategy": self.strategy,
            "pieces": [p.to_json() for p in self.pieces],
            "original_question": self.original_question,
        }
        if self.rephrased_question is not None:
            data["rephrased_question"] = self.rephrased_question
        if self.table_diff is not None:
            data["table_diff"] = self.table_diff.to_json()
        return data

    @classmethod
    def from_json(cls, data: dict) -> "AblationRecord":
        return cls(
            strategy=data["strategy"],
            pieces=tuple(InfoPiece.from_json(p) for p in data["pieces"]),
            original_question=data["original_question"],
            rephrased_question=data.get("rephrased_question"),
            table_diff=TableDiff.from_json(data["table_diff"]) if data.get("table_diff") else None,
        )


@dataclass(frozen=True)
class AblatedTask:
    """A base task with an ablation applied: the effective question/table."""

    base: Task
    question: str
    table: Table
    ablation: AblationRecord

    @property
    def task_id(self) -> str:
        return self.base.id

    @property
    def groundtruth(self):
        return self.base.groundtruth

    def to_json(self) -> dict:
        return {
            "base_task_id": self.base.id,
            "question": self.question,
            "table": self.table.to_json(),
            "ablation": self.ablation.to_json(),
        }


def reconstruct_effective(base: Task, record: AblationRecord) -> tuple[str, Table]:
    """Re-apply an ablation record to its base task."""
    if record.strategy == STRATEGY_QUESTION:
        return record.rephrased_question, base.table
    return base.question, apply_diff(base.table, record.table_diff)


def verify_reconstruction(ablated: AblatedTask) -> bool:
    question, table = reconstruct_effective(ablated.base, ablated.ablation)
    return question == ablated.question and table == ablated.table


def apply_table_ablation(task: Task, pieces, strategy: str) -> AblatedTask:
    """Delete located columns or blank located cells; pure, no model needed."""
    pieces = tuple(pieces)
    if strategy == STRATEGY_COLUMN:
        wanted = [p for p in pieces if p.origin == ORIGIN_COLUMN]
        if not wanted:
            raise AblationError("no column-origin pieces to apply")
        names = []
        for piece in wanted:
            if piece.column not in names:
                names.append(piece.column)
        table = task.table.without_columns(names)
    elif strategy == STRATEGY_VALUE:
        wanted = [p for p in pieces if p.origin == ORIGIN_VALUE]
        if not wanted:
            raise AblationError("no value-origin pieces to apply")
        table = task.table.with_blanked_cells([(p.column, p.row) for p in wanted])
    else:
        raise AblationError(f"not a table strategy: {strategy}")
    record = AblationRecord(
        strategy=strategy,
        pieces=tuple(wanted),
        original_question=task.question,
        table_diff=diff_tables(task.table, table),
    )
    return AblatedTask(base=task, question=task.question, table=table, ablation=record)


def make_question_ablation(task: Task, pieces, rephrased: str) -> AblatedTask:
    """Wrap an accepted rephrasing (validation happens in the teacher)."""
    pieces = tuple(p for p in pieces if p.origin == ORIGIN_QUESTION)
    if not pieces:
        raise AblationError("no question-origin pieces to apply")
    record = AblationRecord(
        strategy=STRATEGY_QUESTION,
        pieces=pieces,
        original_question=task.question,
        rephrased_question=rephrased,
    )
    return AblatedTask(base=task, question=rephrased, table=task.table, ablation=record)


def span_absent(span: str, question: str) -> bool:
    return span.lower() not in question.lower()


def _tokenize_words(text: str) -> list[str]:
    return re.findall(r"[A-Za-z0-9']+", text.lower())


def resolve_question_span(description: str, question: str) -> str | None:
    """Locate the question substring a piece description refers to.

    Preference order: the whole description as a substring; a quoted
    fragment of the description; the longest word n-gram shared with the
    question; a single non-stopword token. Returns the question's own
    substring (original casing) or None.
    """

    def find(text: str) -> str | None:
        needle = text.strip().strip(".,;:!?")
        if not needle:
            return None
        idx = question.lower().find(needle.lower())
        if idx < 0:
            return None
        return question[idx : idx + len(needle)]

    hit = find(description)
    if hit:
        return hit
    for fragment in re.findall(r"""["']([^"']+)["']""", description):
        hit = find(fragment)
        if hit:
            return hit
    tokens = _tokenize_words(description)
    for size in range(len(tokens), 1, -1):
        for start in range(len(tokens) - size + 1):
            phrase = " ".join(tokens[start : start + size])
            pattern = r"\b" + r"\s+".join(re.escape(t) for t in tokens[start : start + size]) + r"\b"
            match = re.search(pattern, question, re.IGNORECASE)
            if match:
                return match.group(0)
            hit = find(phrase)
            if hit:
                return hit
    for token in tokens:
        if token in _STOPWORDS:
            continue
        pattern = r"\b" + re.escape(token) + r"\b"
        match = re.search(pattern, question, re.IGNORECASE)
        if match:
            return match.group(0)
    return None


def resolve_table_locator(description: str, table: Table) -> tuple[str, str | None, int | None] | None:
    """Bind a table piece description to a concrete column or cell.

    A column name mentioned in the description wins (longest name first).
    Otherwise the longest non-empty cell text found in the description
    binds to that cell. Returns (origin, column, row) or None.
    """
    lowered = description.lower()
    named = [c for c in table.columns if c.strip() and c.strip().lower() in lowered]
    cell_hits = []
    for column in table.columns:
        for row_idx, cell in enumerate(table.column_values(column)):
            text = cell.text.strip()
            if text and text.lower() in lowered:
                cell_hits.append((len(text), column, row_idx))
    if named:
        best_column = max(named, key=lambda c: len(c.strip()))
        # a longer cell match beats a shorter column-name match: the
        # description pinpoints a value, not the whole column
        if cell_hits:
            length, column, row_idx = max(cell_hits)
            if length > len(best_column.strip()):
                return (ORIGIN_VALUE, column, row_idx)
        return (ORIGIN_COLUMN, best_column, None)
    if cell_hits:
        _length, column, row_idx = max(cell_hits)
        return (ORIGIN_VALUE, column, row_idx)
    return None
