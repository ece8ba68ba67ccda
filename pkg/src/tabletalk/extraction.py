"""Structured-output extraction from model text.

Model responses embed JSON in markdown fences, sometimes malformed,
sometimes fenceless. Extraction prefers fenced blocks, falls back to
balanced-brace spans, and records where in the text the value came from
so verdict decisions stay auditable.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

CORRECT = "correct"
WRONG = "wrong"

_FENCE_RE = re.compile(r"```([A-Za-z0-9_-]*)[ \t]*\r?\n(.*?)```", re.DOTALL)
_TOKEN_RE = re.compile(r"\[\[\s*(correct|wrong)\s*\]\]", re.IGNORECASE)


class NoJsonFound(ValueError):
    pass


class NoVerdict(ValueError):
    pass


@dataclass(frozen=True)
class ExtractedJson:
    value: object
    start: int
    end: int
    source: str  # "fence" or "braces"


@dataclass(frozen=True)
class Verdict:
    """A judged correctness outcome and how it was reached."""

    value: str  # "correct" | "wrong"
    analysis: str = ""
    comparison_mode: str | None = None
    decided_by: str | None = None  # "pre-check" | "model"

    @property
    def is_correct(self) -> bool:
        return self.value == CORRECT

    def to_json(self) -> dict:
        data: dict = {"value": self.value, "analysis": self.analysis}
        if self.comparison_mode:
            data["comparison_mode"] = self.comparison_mode
        if self.decided_by:
            data["decided_by"] = self.decided_by
        return data

    @classmethod
    def from_json(cls, data: dict) -> "Verdict":
        return cls(
            data["value"],
            data.get("analysis", ""),
            data.get("comparison_mode"),
            data.get("decided_by"),
        )


def iter_fenced_blocks(text: str):
    """Yield (language tag, body, start, end) for every fenced block."""
    for match in _FENCE_RE.finditer(text):
        yield match.group(1).lower(), match.group(2), match.start(2), match.end(2)


def _balanced_spans(text: str):
    """Yield (start, end) of top-level balanced {...} / [...] spans."""
    i = 0
    length = len(text)
    while i < length:
        ch = text[i]
        if ch not in "{[":
            i += 1
            continue
        close = "}" if ch == "{" else "]"
        depth = 0
        in_string = False
        escaped = False
        j = i
        end = None
        while j < length:
            c = text[j]
            if in_string:
                if escaped:
                    escaped = False
                elif c == "\\":
                    escaped = True
                elif c == '"':
                    in_string = False
            elif c == '"':
                in_string = True
            elif c in "{[":
                depth += 1
            elif c in "}]":
                depth -= 1
                if depth == 0:
                    end = j + 1
                    break
            j += 1
        if end is None:
            i += 1
            continue
        if text[end - 1] == close:
            yield i, end
            i = end
        else:
            i += 1


def extract_json_block(text: str) -> ExtractedJson:
    """Extract the first parseable JSON value from model text.

    Fenced code blocks are tried first, in order; when none parses, the
    outermost balanced-brace (or bracket) spans in the raw text are
    tried. Raises NoJsonFound when nothing parses.
    """
    for _tag, body, start, end in iter_fenced_blocks(text):
        try:
            return ExtractedJson(json.loads(body), start, end, "fence")
        except ValueError:
            continue
    for start, end in _balanced_spans(text):
        try:
            return ExtractedJson(json.loads(text[start:end]), start, end, "braces")
        except ValueError:
            continue
    raise NoJsonFound("no parseable JSON block in response")


def _scan_tokens(text: str) -> str | None:
    """Return correct/wrong from the LAST [[...]] token in ``text``."""
    last = None
    for match in _TOKEN_RE.finditer(text):
        last = match.group(1).lower()
    return last


def extract_verdict(text: str) -> Verdict:
    """Extract a correct/wrong verdict from judge output.

    The "verdict" field of an embedded JSON object wins when present;
    otherwise the raw text is scanned for [[correct]]/[[wrong]] tokens.
    When both tokens occur, the last occurrence wins (judges are
    instructed to conclude with their verdict).
    """
    analysis = ""
    try:
        extracted = extract_json_block(text)
    except NoJsonFound:
        extracted = None
    if extracted is not None and isinstance(extracted.value, dict):
        analysis = str(extracted.value.get("analysis", ""))
        field = extracted.value.get("verdict")
        if isinstance(field, str):
            token = _scan_tokens(field)
            if token is None:
                bare = field.strip().lower()
                if bare in (CORRECT, WRONG):
                    token = bare
            if token is not None:
                return Verdict(token, analysis, decided_by="model")
    token = _scan_tokens(text)
    if token is None:
        raise NoVerdict("no [[correct]]/[[wrong]] token in response")
    return Verdict(token, analysis, decided_by="model")
