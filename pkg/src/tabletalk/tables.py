"""Rectangular table model, prompt rendering, and deletion diffs.

Tables are column-addressable and immutable. Cell values keep their raw
text plus a parsed decimal when the text looks numeric, so that numeric
operations downstream never round-trip through binary floats.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation


class InvalidTable(ValueError):
    """Raised when table construction violates a structural invariant."""


class NotASubTable(ValueError):
    """Raised when a supposed ablated table is not a pure deletion of its base."""


_CURRENCY = "$€£¥"
_SCALE_WORDS = {
    "%": "percent",
    "percent": "percent",
    "thousand": "thousand",
    "million": "million",
    "billion": "billion",
}
# digit groups like 1,234,567 (no spaces around the commas)
_THOUSANDS_RE = re.compile(r"(?<=\d),(?=\d{3}(?!\d))")


def parse_decimal(text: str) -> tuple[Decimal, str | None] | None:
    """Parse ``text`` as a decimal with an optional scale suffix.

    Handles currency symbols, thousands separators, a trailing "%" or
    scale word (thousand/million/billion), and accounting-style
    parenthesized negatives. Returns (value, scale) or None when the
    text is not numeric.
    """
    s = text.strip()
    if not s:
        return None
    scale = None
    lowered = s.lower()
    if lowered.endswith("%"):
        scale = "percent"
        s = s[:-1].strip()
    else:
        for suffix, name in _SCALE_WORDS.items():
            if suffix != "%" and lowered.endswith(suffix):
                head = s[: len(s) - len(suffix)]
                if head and (head[-1].isspace() or head[-1].isdigit()):
                    scale = name
                    s = head.strip()
                    break
    if s.startswith("(") and s.endswith(")") and len(s) > 2:
        inner = parse_decimal(s[1:-1])
        if inner is None:
            return None
        value, inner_scale = inner
        if inner_scale and scale and inner_scale != scale:
            return None
        return -value, scale or inner_scale
    negative = False
    if s[:1] in ("-", "+"):
        negative = s[0] == "-"
        s = s[1:].strip()
    s = s.lstrip(_CURRENCY).strip()
    s = _THOUSANDS_RE.sub("", s)
    if not s or not re.fullmatch(r"\d*\.?\d+|\d+\.", s):
        return None
    try:
        value = Decimal(s)
    except InvalidOperation:
        return None
    if negative:
        value = -value
    return value, scale


@dataclass(frozen=True)
class Cell:
    """One table cell: raw text plus a parsed decimal when numeric.

    An empty cell has empty (or whitespace-only) text.
    """

    text: str
    number: Decimal | None = field(default=None, compare=False)
    scale: str | None = field(default=None, compare=False)

    @classmethod
    def of(cls, value) -> "Cell":
        if value is None:
            return cls("")
        if isinstance(value, Cell):
            return value
        if isinstance(value, bool):
            value = str(value).lower()
        if isinstance(value, (int, float, Decimal)):
            text = str(value)
        else:
            text = str(value)
        parsed = parse_decimal(text)
        if parsed is None:
            return cls(text)
        return cls(text, parsed[0], parsed[1])

    @property
    def is_empty(self) -> bool:
        return not self.text.strip()

    def __str__(self) -> str:
        return self.text


EMPTY_CELL = Cell("")


def _escape_field(text: str) -> str:
    return text.replace("\\", "\\\\").replace("|", "\\|").replace("\n", "\\n")


def _unescape_field(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            if nxt == "n":
                out.append("\n")
            else:
                out.append(nxt)
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


@dataclass(frozen=True)
class Table:
    """Rectangular table with uniquely named columns.

    columns: ordered column names; rows: list of rows, each one Cell per
    column. Immutable after construction.
    """

    columns: tuple[str, ...]
    rows: tuple[tuple[Cell, ...], ...]

    def __post_init__(self):
        if len(self.columns) < 1:
            raise InvalidTable("table needs at least one column")
        trimmed = [c.strip() for c in self.columns]
        if len(set(trimmed)) != len(trimmed):
            raise InvalidTable(f"duplicate column names: {self.columns}")
        for i, row in enumerate(self.rows):
            if len(row) != len(self.columns):
                raise InvalidTable(
                    f"row {i} has {len(row)} cells, expected {len(self.columns)}"
                )

    @classmethod
    def from_values(cls, columns, rows) -> "Table":
        return cls(
            tuple(str(c) for c in columns),
            tuple(tuple(Cell.of(v) for v in row) for row in rows),
        )

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def column_index(self, name: str) -> int:
        target = name.strip()
        for i, c in enumerate(self.columns):
            if c.strip() == target:
                return i
        raise KeyError(name)

    def column_values(self, name: str) -> list[Cell]:
        idx = self.column_index(name)
        return [row[idx] for row in self.rows]

    def cell(self, column: str, row: int) -> Cell:
        return self.rows[row][self.column_index(column)]

    def without_columns(self, names) -> "Table":
        drop = {self.column_index(n) for n in names}
        if len(drop) == len(self.columns):
            raise InvalidTable("cannot remove every column")
        keep = [i for i in range(len(self.columns)) if i not in drop]
        return Table(
            tuple(self.columns[i] for i in keep),
            tuple(tuple(row[i] for i in keep) for row in self.rows),
        )

    def with_blanked_cells(self, locations) -> "Table":
        """Return a copy with the given (column name, row index) cells emptied."""
        blank = set()
        for column, row in locations:
            idx = self.column_index(column)
            if not 0 <= row < len(self.rows):
                raise IndexError(f"row {row} out of range")
            blank.add((idx, row))
        return Table(
            self.columns,
            tuple(
                tuple(
                    EMPTY_CELL if (ci, ri) in blank else cell
                    for ci, cell in enumerate(row)
                )
                for ri, row in enumerate(self.rows)
            ),
        )

    def to_json(self) -> dict:
        return {
            "columns": list(self.columns),
            "rows": [[cell.text for cell in row] for row in self.rows],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Table":
        return cls.from_values(data["columns"], data["rows"])


def render_table(table: Table) -> str:
    """Render a table as pipe-delimited text for embedding in prompts.

    Header row, one dashed separator row, then one line per data row.
    Pipes, backslashes and newlines inside fields are escaped, so the
    rendering is unambiguous and deterministic for equal tables.
    """
    lines = ["| " + " | ".join(_escape_field(c) for c in table.columns) + " |"]
    lines.append("| " + " | ".join("---" for _ in table.columns) + " |")
    for row in table.rows:
        lines.append("| " + " | ".join(_escape_field(c.text) for c in row) + " |")
    return "\n".join(lines)


def _split_rendered_line(line: str) -> list[str]:
    body = line.strip()
    if body.startswith("|"):
        body = body[1:]
    if body.endswith("|") and not body.endswith("\\|"):
        body = body[:-1]
    fields = []
    current = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body):
            current.append(ch)
            current.append(body[i + 1])
            i += 2
            continue
        if ch == "|":
            fields.append("".join(current).strip())
            current = []
        else:
            current.append(ch)
        i += 1
    fields.append("".join(current).strip())
    return [_unescape_field(f) for f in fields]


def parse_rendered_table(text: str) -> Table:
    """Parse text produced by render_table back into a Table."""
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if len(lines) < 2:
        raise InvalidTable("rendered table needs a header and separator row")
    columns = _split_rendered_line(lines[0])
    rows = [_split_rendered_line(ln) for ln in lines[2:]]
    for row in rows:
        if len(row) != len(columns):
            raise InvalidTable("ragged rendered table")
    return Table.from_values(columns, rows)


@dataclass(frozen=True)
class TableDiff:
    """Deletions turning a base table into an ablated one.

    fraction_removed counts cells in removed columns plus individually
    removed cells, over the base table's m*k cells.
    """

    removed_columns: tuple[str, ...]
    removed_cells: tuple[tuple[str, int], ...]
    fraction_removed: Decimal

    @property
    def is_empty(self) -> bool:
        return not self.removed_columns and not self.removed_cells

    def to_json(self) -> dict:
        return {
            "removed_columns": list(self.removed_columns),
            "removed_cells": [[c, r] for c, r in self.removed_cells],
            "fraction_removed": str(self.fraction_removed),
        }

    @classmethod
    def from_json(cls, data: dict) -> "TableDiff":
        return cls(
            tuple(data["removed_columns"]),
            tuple((c, int(r)) for c, r in data["removed_cells"]),
            Decimal(data["fraction_removed"]),
        )


def _removed_fraction(base: Table, removed_columns, removed_cells) -> Decimal:
    total = base.n_columns * base.n_rows
    if total == 0:
        return Decimal(0)
    removed = len(removed_columns) * base.n_rows + len(removed_cells)
    return Decimal(removed) / Decimal(total)


def diff_tables(base: Table, ablated: Table) -> TableDiff:
    """Describe how ``ablated`` was produced from ``base`` by deletions.

    Whole missing columns are reported as removed columns; cells whose
    value was deleted (now empty where the base had content) are reported
    individually. Raises NotASubTable when ``ablated`` is not a pure
    deletion of ``base``.
    """
    base_names = [c.strip() for c in base.columns]
    ablated_names = [c.strip() for c in ablated.columns]
    if ablated.n_rows != base.n_rows:
        raise NotASubTable(
            f"row count changed: {base.n_rows} -> {ablated.n_rows}"
        )
    for name in ablated_names:
        if name not in base_names:
            raise NotASubTable(f"column {name!r} absent from base table")
    it = iter(base_names)
    for name in ablated_names:
        # column order must be preserved by deletion
        for candidate in it:
            if candidate == name:
                break
        else:
            raise NotASubTable(f"column {name!r} out of order")
    removed_columns = tuple(
        base.columns[i] for i, name in enumerate(base_names) if name not in ablated_names
    )
    removed_cells = []
    for name in ablated_names:
        base_col = base.column_values(name)
        ablated_col = ablated.column_values(name)
        for row_idx, (b, a) in enumerate(zip(base_col, ablated_col)):
            if b.text == a.text:
                continue
            if a.is_empty and not b.is_empty:
                removed_cells.append((name, row_idx))
            else:
                raise NotASubTable(
                    f"cell ({name!r}, {row_idx}) changed rather than deleted"
                )
    removed_cells = tuple(removed_cells)
    return TableDiff(
        removed_columns,
        removed_cells,
        _removed_fraction(base, removed_columns, removed_cells),
    )


def apply_diff(base: Table, diff: TableDiff) -> Table:
    """Apply a deletion diff to its base table, reproducing the ablated table."""
    blanked = base.with_blanked_cells(diff.removed_cells) if diff.removed_cells else base
    if diff.removed_columns:
        blanked = blanked.without_columns(diff.removed_columns)
    return blanked
