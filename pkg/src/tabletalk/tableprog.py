"""A small deterministic expression language over tables.

Students emit one program per answer inside a ```tableprog fence; the
evaluator runs it against the task's table with exact decimal
arithmetic, so answers are verifiable without any external runtime.

Grammar:

    expr       := additive
    additive   := multiplicative (("+" | "-") multiplicative)*
    multiplicative := unary (("*" | "/") unary)*
    unary      := "-" unary | primary
    primary    := NUMBER | STRING | col-ref | "(" expr ")"
                | AGG "(" col-ref ["," predicate] ")"
                | "LOOKUP" "(" col-ref "," predicate ")"
    AGG        := "SUM" | "AVG" | "COUNT" | "MIN" | "MAX"
    predicate  := col-ref cmp literal
    cmp        := "==" | "!=" | "<" | "<=" | ">" | ">="
    literal    := NUMBER | "-" NUMBER | STRING
    col-ref    := `quoted column name` | bare identifier

Keywords are case-insensitive. Semantics are total and deterministic:

- All arithmetic is decimal; dividing by zero is a division-by-zero
  failure, never an exception.
- Empty cells never match a predicate and are excluded from aggregate
  selections. Comparing a number against a non-numeric text cell (or a
  string against a numeric cell) is a type failure rather than a silent
  non-match, so table damage surfaces instead of being masked.
- SUM of an empty selection is 0 and COUNT is the number of non-empty
  selected cells; AVG, MIN and MAX of an empty selection fail with
  empty-selection, as does LOOKUP with no matching row.
- LOOKUP returns the first match in row order.
- Aggregated cells must agree on their scale annotation; the result
  carries it. Predicates compare plain numbers, ignoring scale.
- Arithmetic scale rules: +/- require equal scales and keep them;
  * allows at most one scaled operand and keeps its scale; / keeps the
  scale when dividing by a plain number and yields a plain ratio for
  equal scales. Everything else is a type failure.
- A bare column reference evaluates to the column's values as a list.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, DivisionByZero, InvalidOperation, localcontext

from .answers import Answer, normalize_answer
from .tables import Table

AGGREGATES = ("SUM", "AVG", "COUNT", "MIN", "MAX")
COMPARATORS = ("==", "!=", "<=", ">=", "<", ">")

FAILURE_KINDS = (
    "parse",
    "unknown-column",
    "type",
    "division-by-zero",
    "empty-selection",
    "timeout",
)

PROGRAM_FENCE_TAG = "tableprog"


class ParseFailure(ValueError):
    """Syntax error with the offset and the token set that was expected."""

    def __init__(self, offset: int, expected, found: str):
        self.offset = offset
        self.expected = frozenset(expected)
        self.found = found
        options = ", ".join(sorted(self.expected))
        super().__init__(f"parse error at offset {offset}: expected {options}, found {found}")


# --- AST ---------------------------------------------------------------


@dataclass(frozen=True)
class NumberLit:
    value: Decimal


@dataclass(frozen=True)
class StringLit:
    value: str


@dataclass(frozen=True)
class ColRef:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Predicate:
    column: ColRef
    cmp: str
    literal: object  # NumberLit | StringLit


@dataclass(frozen=True)
class Aggregate:
    func: str
    column: ColRef
    predicate: Predicate | None


@dataclass(frozen=True)
class Lookup:
    column: ColRef
    predicate: Predicate


@dataclass(frozen=True)
class Program:
    source: str
    root: object


@dataclass(frozen=True)
class ExecFailure:
    kind: str
    message: str

    def to_json(self) -> dict:
        return {"kind": self.kind, "message": self.message}

    @classmethod
    def from_json(cls, data: dict) -> "ExecFailure":
        return cls(data["kind"], data["message"])


@dataclass(frozen=True)
class ExecResult:
    """Exactly one of value / failure is set."""

    value: Answer | None = None
    failure: ExecFailure | None = None

    def __post_init__(self):
        if (self.value is None) == (self.failure is None):
            raise ValueError("ExecResult needs exactly one of value, failure")

    @property
    def ok(self) -> bool:
        return self.value is not None

    def to_json(self) -> dict:
        if self.value is not None:
            return {"value": self.value.to_json()}
        return {"failure": self.failure.to_json()}

    @classmethod
    def from_json(cls, data: dict) -> "ExecResult":
        if "value" in data:
            return cls(value=Answer.from_json(data["value"]))
        return cls(failure=ExecFailure.from_json(data["failure"]))


# --- Tokenizer ---------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str  # NUMBER STRING NAME IDENT OP EOF
    text: str
    offset: int


_NUMBER_RE = re.compile(r"\d*\.\d+|\d+\.?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def _tokenize(source: str) -> list[Token]:
    tokens = []
    i = 0
    length = len(source)
    while i < length:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "`":
            end = source.find("`", i + 1)
            if end < 0:
                raise ParseFailure(i, {"closing backtick"}, "end of input")
            tokens.append(Token("NAME", source[i + 1 : end], i))
            i = end + 1
            continue
        if ch in "'\"":
            j = i + 1
            chunks = []
            while j < length and source[j] != ch:
                if source[j] == "\\" and j + 1 < length:
                    chunks.append(source[j + 1])
                    j += 2
                else:
                    chunks.append(source[j])
                    j += 1
            if j >= length:
                raise ParseFailure(i, {"closing quote"}, "end of input")
            tokens.append(Token("STRING", "".join(chunks), i))
            i = j + 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < length and source[i + 1].isdigit()):
            match = _NUMBER_RE.match(source, i)
            tokens.append(Token("NUMBER", match.group(0), i))
            i = match.end()
            continue
        if ch.isalpha() or ch == "_":
            match = _IDENT_RE.match(source, i)
            tokens.append(Token("IDENT", match.group(0), i))
            i = match.end()
            continue
        two = source[i : i + 2]
        if two in ("==", "!=", "<=", ">="):
            tokens.append(Token("OP", two, i))
            i += 2
            continue
        if ch in "+-*/(),<>":
            tokens.append(Token("OP", ch, i))
            i += 1
            continue
        raise ParseFailure(i, {"a token"}, repr(ch))
    tokens.append(Token("EOF", "", length))
    return tokens


# --- Parser ------------------------------------------------------------


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def fail(self, expected) -> ParseFailure:
        token = self.peek()
        found = "end of input" if token.kind == "EOF" else repr(token.text)
        return ParseFailure(token.offset, expected, found)

    def expect_op(self, text: str) -> Token:
        token = self.peek()
        if token.kind == "OP" and token.text == text:
            return self.advance()
        raise self.fail({f"'{text}'"})

    def parse(self) -> object:
        node = self.expr()
        if self.peek().kind != "EOF":
            raise self.fail({"end of input", "an operator"})
        return node

    def expr(self):
        node = self.multiplicative()
        while self.peek().kind == "OP" and self.peek().text in ("+", "-"):
            op = self.advance().text
            node = BinOp(op, node, self.multiplicative())
        return node

    def multiplicative(self):
        node = self.unary()
        while self.peek().kind == "OP" and self.peek().text in ("*", "/"):
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek().kind == "OP" and self.peek().text == "-":
            self.advance()
            return Neg(self.unary())
        return self.primary()

    def primary(self):
        token = self.peek()
        if token.kind == "NUMBER":
            self.advance()
            return NumberLit(Decimal(token.text))
        if token.kind == "STRING":
            self.advance()
            return StringLit(token.text)
        if token.kind == "NAME":
            self.advance()
            return ColRef(token.text)
        if token.kind == "OP" and token.text == "(":
            self.advance()
            node = self.expr()
            self.expect_op(")")
            return node
        if token.kind == "IDENT":
            keyword = token.text.upper()
            if keyword in AGGREGATES:
                self.advance()
                self.expect_op("(")
                column = self.col_ref()
                predicate = None
                if self.peek().kind == "OP" and self.peek().text == ",":
                    self.advance()
                    predicate = self.predicate()
                self.expect_close_after_args()
                return Aggregate(keyword, column, predicate)
            if keyword == "LOOKUP":
                self.advance()
                self.expect_op("(")
                column = self.col_ref()
                self.expect_op(",")
                predicate = self.predicate()
                self.expect_close_after_args()
                return Lookup(column, predicate)
            # bare identifier doubles as a column reference
            self.advance()
            return ColRef(token.text)
        raise self.fail({"a number", "a string", "a column reference", "'('"})

    def expect_close_after_args(self):
        token = self.peek()
        if token.kind == "OP" and token.text == ")":
            self.advance()
            return
        raise self.fail({"','", "')'"})

    def col_ref(self) -> ColRef:
        token = self.peek()
        if token.kind == "NAME":
            self.advance()
            return ColRef(token.text)
        if token.kind == "IDENT" and token.text.upper() not in AGGREGATES + ("LOOKUP",):
            self.advance()
            return ColRef(token.text)
        raise self.fail({"a column reference"})

    def predicate(self) -> Predicate:
        column = self.col_ref()
        token = self.peek()
        if token.kind == "OP" and token.text in COMPARATORS:
            self.advance()
            cmp = token.text
        else:
            raise self.fail({f"'{c}'" for c in COMPARATORS})
        literal = self.literal()
        return Predicate(column, cmp, literal)

    def literal(self):
        token = self.peek()
        if token.kind == "NUMBER":
            self.advance()
            return NumberLit(Decimal(token.text))
        if token.kind == "OP" and token.text == "-":
            self.advance()
            number = self.peek()
            if number.kind != "NUMBER":
                raise self.fail({"a number"})
            self.advance()
            return NumberLit(-Decimal(number.text))
        if token.kind == "STRING":
            self.advance()
            return StringLit(token.text)
        raise self.fail({"a number", "a string"})


def parse_program(source: str) -> Program:
    """Parse program text; raises ParseFailure with offset and expectations."""
    return Program(source, _Parser(source).parse())


# --- Evaluator ---------------------------------------------------------


class _EvalError(Exception):
    def __init__(self, kind: str, message: str):
        self.kind = kind
        self.message = message
        super().__init__(message)


_NUM = "number"
_TEXT = "text"
_EMPTY = "empty"
_LIST = "list"


def _column_cells(table: Table, ref: ColRef):
    try:
        return table.column_values(ref.name)
    except KeyError:
        raise _EvalError("unknown-column", f"no column named {ref.name!r}")


def _match(cell, predicate: Predicate) -> bool:
    if cell.is_empty:
        return False
    literal = predicate.literal
    if isinstance(literal, NumberLit):
        if cell.number is None:
            raise _EvalError(
                "type",
                f"numeric predicate against non-numeric cell {cell.text!r}",
            )
        left, right = cell.number, literal.value
    else:
        if cell.number is not None:
            raise _EvalError(
                "type",
                f"string predicate against numeric cell {cell.text!r}",
            )
        left, right = cell.text.strip().casefold(), literal.value.strip().casefold()
    cmp = predicate.cmp
    if cmp == "==":
        return left == right
    if cmp == "!=":
        return left != right
    if cmp == "<":
        return left < right
    if cmp == "<=":
        return left <= right
    if cmp == ">":
        return left > right
    return left >= right


def _selection(table: Table, column: ColRef, predicate: Predicate | None):
    cells = _column_cells(table, column)
    if predicate is None:
        return cells
    filter_cells = _column_cells(table, predicate.column)
    return [cell for cell, key in zip(cells, filter_cells) if _match(key, predicate)]


def _numeric_values(cells, context: str):
    values = []
    scale = None
    for cell in cells:
        if cell.is_empty:
            continue
        if cell.number is None:
            raise _EvalError("type", f"{context} over non-numeric cell {cell.text!r}")
        if values and cell.scale != scale:
            raise _EvalError(
                "type", f"{context} over cells with mixed scales ({scale!r} vs {cell.scale!r})"
            )
        scale = cell.scale
        values.append(cell.number)
    return values, scale


def _combine_scales(op: str, left: str | None, right: str | None) -> str | None:
    """Scale algebra for arithmetic.

    +/-: operands must share a scale, which the result keeps. *: scaling
    by a plain number keeps the scale; two scaled operands fail. /: a
    scaled value divided by a plain number keeps its scale; the ratio of
    two same-scaled values is plain; anything else fails.
    """
    if op in ("+", "-"):
        if left != right:
            raise _EvalError("type", f"{op} over mixed scales ({left!r} vs {right!r})")
        return left
    if op == "*":
        if left and right:
            raise _EvalError("type", f"* over two scaled values ({left!r}, {right!r})")
        return left or right
    if left == right:
        return None
    if left and not right:
        return left
    raise _EvalError("type", f"/ over incompatible scales ({left!r} vs {right!r})")


def _eval(node, table: Table):
    if isinstance(node, NumberLit):
        return (_NUM, node.value, None)
    if isinstance(node, StringLit):
        return (_TEXT, node.value)
    if isinstance(node, ColRef):
        return (_LIST, _column_cells(table, node))
    if isinstance(node, Neg):
        value = _eval(node.operand, table)
        if value[0] != _NUM:
            raise _EvalError("type", "negation needs a numeric operand")
        return (_NUM, -value[1], value[2])
    if isinstance(node, BinOp):
        left = _eval(node.left, table)
        right = _eval(node.right, table)
        for side in (left, right):
            if side[0] != _NUM:
                raise _EvalError("type", f"arithmetic needs numeric operands, got {side[0]}")
        a, b = left[1], right[1]
        scale = _combine_scales(node.op, left[2], right[2])
        if node.op == "+":
            return (_NUM, a + b, scale)
        if node.op == "-":
            return (_NUM, a - b, scale)
        if node.op == "*":
            return (_NUM, a * b, scale)
        if b == 0:
            raise _EvalError("division-by-zero", "division by zero")
        with localcontext() as ctx:
            ctx.prec = 28
            return (_NUM, a / b, scale)
    if isinstance(node, Aggregate):
        cells = _selection(table, node.column, node.predicate)
        if node.func == "COUNT":
            return (_NUM, Decimal(sum(1 for c in cells if not c.is_empty)), None)
        values, scale = _numeric_values(cells, node.func)
        if node.func == "SUM":
            total = Decimal(0)
            for v in values:
                total += v
            return (_NUM, total, scale if values else None)
        if not values:
            raise _EvalError("empty-selection", f"{node.func} over an empty selection")
        if node.func == "AVG":
            total = Decimal(0)
            for v in values:
                total += v
            with localcontext() as ctx:
                ctx.prec = 28
                return (_NUM, total / Decimal(len(values)), scale)
        if node.func == "MIN":
            return (_NUM, min(values), scale)
        return (_NUM, max(values), scale)
    if isinstance(node, Lookup):
        cells = _column_cells(table, node.column)
        filter_cells = _column_cells(table, node.predicate.column)
        # the predicate runs on every row, so a type failure anywhere in
        # the filter column surfaces even when an earlier row matched
        matches = [
            cell for cell, key in zip(cells, filter_cells) if _match(key, node.predicate)
        ]
        if not matches:
            raise _EvalError("empty-selection", "LOOKUP matched no row")
        cell = matches[0]
        if cell.is_empty:
            return (_EMPTY,)
        if cell.number is not None:
            return (_NUM, cell.number, cell.scale)
        return (_TEXT, cell.text)
    raise _EvalError("type", f"cannot evaluate node {node!r}")


def _to_answer(value) -> Answer:
    if value[0] == _NUM:
        answer = Answer("", "numeric", value=value[1], scale=value[2])
        return Answer(answer.canonical, "numeric", value=value[1], scale=value[2])
    if value[0] == _TEXT:
        return normalize_answer(value[1])
    if value[0] == _EMPTY:
        return Answer("", "text", text="")
    items = []
    for cell in value[1]:
        if cell.is_empty:
            items.append(Answer("", "text", text=""))
        elif cell.number is not None:
            items.append(Answer(cell.text, "numeric", value=cell.number, scale=cell.scale))
        else:
            items.append(normalize_answer(cell.text))
    if len(items) == 1:
        return items[0]
    raw = ", ".join(item.canonical for item in items)
    return Answer(raw, "list", items=tuple(items))


def eval_program(program: Program, table: Table) -> ExecResult:
    """Evaluate a parsed program; total, pure, never raises."""
    try:
        value = _eval(program.root, table)
    except _EvalError as exc:
        return ExecResult(failure=ExecFailure(exc.kind, exc.message))
    except (DivisionByZero, InvalidOperation) as exc:
        return ExecResult(failure=ExecFailure("division-by-zero", str(exc)))
    return ExecResult(value=_to_answer(value))


def run_program(source: str, table: Table) -> ExecResult:
    """Parse and evaluate, mapping syntax errors into a parse failure result."""
    try:
        program = parse_program(source)
    except ParseFailure as exc:
        return ExecResult(failure=ExecFailure("parse", str(exc)))
    return eval_program(program, table)


def extract_program_source(text: str) -> str | None:
    """Pull the first ```tableprog fenced block out of model output."""
    from .extraction import iter_fenced_blocks

    for tag, body, _start, _end in iter_fenced_blocks(text):
        if tag == PROGRAM_FENCE_TAG:
            stripped = body.strip()
            if stripped:
                return stripped
    return None
