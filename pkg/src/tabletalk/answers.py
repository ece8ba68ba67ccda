"""Answer normalization and comparison.

Raw answer strings (from datasets and from model output) are normalized
into numeric, text, or list form before any equality check. Numbers are
kept as exact decimals so comparisons and serialized artifacts never
depend on float formatting.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from .tables import _THOUSANDS_RE, parse_decimal

STRICT = "strict"
LENIENT = "lenient"

# relative tolerance for strict numeric equality
_REL_TOL = Decimal("1e-6")

_AND_SPLIT_RE = re.compile(r"\s+and\s+", re.IGNORECASE)


@dataclass(frozen=True)
class Answer:
    """A raw answer string plus its normalized form.

    kind is one of "numeric", "text", "list". Numeric answers carry an
    exact decimal value and an optional scale annotation (percent,
    thousand, million, billion). List answers hold normalized elements.
    """

    raw_text: str
    kind: str
    value: Decimal | None = None
    scale: str | None = None
    text: str | None = None
    items: tuple["Answer", ...] = ()

    @property
    def is_empty(self) -> bool:
        if self.kind == "text":
            return not self.text
        if self.kind == "list":
            return not self.items
        return False

    @property
    def canonical(self) -> str:
        """Canonical string form; normalizing it again is a no-op."""
        if self.kind == "numeric":
            base = format(self.value, "f")
            if self.scale == "percent":
                return base + "%"
            if self.scale:
                return f"{base} {self.scale}"
            return base
        if self.kind == "list":
            return ", ".join(item.canonical for item in self.items)
        return self.text or ""

    def to_json(self) -> dict:
        data: dict = {"raw": self.raw_text, "kind": self.kind}
        if self.kind == "numeric":
            data["value"] = str(self.value)
            if self.scale:
                data["scale"] = self.scale
        elif self.kind == "list":
            data["items"] = [item.to_json() for item in self.items]
        else:
            data["text"] = self.text
        return data

    @classmethod
    def from_json(cls, data: dict) -> "Answer":
        kind = data["kind"]
        if kind == "numeric":
            return cls(
                data["raw"], kind, value=Decimal(data["value"]), scale=data.get("scale")
            )
        if kind == "list":
            return cls(
                data["raw"],
                kind,
                items=tuple(cls.from_json(item) for item in data["items"]),
            )
        return cls(data["raw"], kind, text=data["text"])


_QUOTE_PAIRS = {('"', '"'), ("'", "'"), ("“", "”"), ("‘", "’")}


def _strip_quotes(text: str) -> str:
    s = text.strip()
    while len(s) >= 2 and (s[0], s[-1]) in _QUOTE_PAIRS:
        s = s[1:-1].strip()
    return s


def _split_enumeration(text: str) -> list[str]:
    """Split on top-level commas and "and" separators.

    Commas acting as thousands separators inside digit groups are
    protected before splitting.
    """
    protected = _THOUSANDS_RE.sub("\x00", text)
    parts: list[str] = []
    for chunk in protected.split(","):
        for piece in _AND_SPLIT_RE.split(chunk):
            piece = piece.replace("\x00", ",").strip()
            if piece:
                parts.append(piece)
    return parts


def _normalize_scalar(text: str) -> Answer:
    s = _strip_quotes(text)
    parsed = parse_decimal(s)
    if parsed is not None:
        return Answer(text, "numeric", value=parsed[0], scale=parsed[1])
    canon = re.sub(r"\s+", " ", s).strip().lower()
    return Answer(text, "text", text=canon)


def normalize_answer(raw) -> Answer:
    """Normalize a raw answer into numeric, text, or list form.

    Accepts strings, numbers, and sequences (sequence elements normalize
    individually). Strips currency symbols, thousands separators and
    surrounding quotes; lowercases text; parses percent and scale-word
    suffixes into a scale annotation; splits top-level comma/"and"
    enumerations into list answers. Unparseable numerics stay text.
    """
    if isinstance(raw, Answer):
        return raw
    if isinstance(raw, (list, tuple)):
        items = tuple(normalize_answer(x) for x in raw)
        if len(items) == 1:
            return items[0]
        return Answer(
            ", ".join(str(x) for x in raw), "list", items=items
        )
    if isinstance(raw, (int, float, Decimal)):
        raw = str(raw)
    text = str(raw)
    stripped = _strip_quotes(text)
    parts = _split_enumeration(stripped)
    if len(parts) > 1:
        return Answer(
            text, "list", items=tuple(_normalize_scalar(p) for p in parts)
        )
    scalar = _normalize_scalar(stripped)
    return Answer(text, scalar.kind, value=scalar.value, scale=scalar.scale,
                  text=scalar.text, items=scalar.items)


def _decimal_places(value: Decimal) -> int:
    exponent = value.as_tuple().exponent
    if not isinstance(exponent, int):
        return 0
    return max(0, -exponent)


def _numeric_equal(a: Answer, b: Answer, mode: str) -> bool:
    if a.scale != b.scale:
        return False
    x, y = a.value, b.value
    assert x is not None and y is not None
    diff = abs(x - y)
    if diff <= _REL_TOL * max(abs(x), abs(y)):
        return True
    if mode != LENIENT:
        return False
    # round the finer-precision operand to the coarser one's places
    places = min(_decimal_places(x), _decimal_places(y))
    quantum = Decimal(1).scaleb(-places)
    return x.quantize(quantum, rounding=ROUND_HALF_UP) == y.quantize(
        quantum, rounding=ROUND_HALF_UP
    )


def answers_equal(a, b, mode: str = STRICT) -> bool:
    """Compare two answers after normalization.

    strict: numerics must agree within 1e-6 relative tolerance with the
    same scale annotation; text compares by normalized form. lenient
    additionally accepts numerics that agree after rounding the
    finer-precision operand to the coarser operand's decimal places.
    Lists compare as multisets. Scales are never converted (12% != 0.12).
    """
    if mode not in (STRICT, LENIENT):
        raise ValueError(f"unknown comparison mode: {mode}")
    a = normalize_answer(a)
    b = normalize_answer(b)
    if a.kind == "list" or b.kind == "list":
        items_a = list(a.items) if a.kind == "list" else [a]
        items_b = list(b.items) if b.kind == "list" else [b]
        if len(items_a) != len(items_b):
            return False
        remaining = list(items_b)
        for item in items_a:
            for i, other in enumerate(remaining):
                if answers_equal(item, other, mode):
                    del remaining[i]
                    break
            else:
                return False
        return True
    if a.kind == "numeric" and b.kind == "numeric":
        return _numeric_equal(a, b, mode)
    if a.kind == "text" and b.kind == "text":
        return a.text == b.text
    return False
