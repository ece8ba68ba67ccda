"""JSON-block and verdict extraction tests against adversarial fixtures."""

import json
from pathlib import Path

import pytest

from tabletalk.extraction import (
    NoJsonFound,
    NoVerdict,
    extract_json_block,
    extract_verdict,
)

FIXTURES = Path(__file__).parent / "fixtures"


def load_cases(name):
    return json.loads((FIXTURES / name).read_text(encoding="utf-8"))


class TestExtractJson:
    def test_fenced_object(self):
        got = extract_json_block('```json\n{"verdict": "[[correct]]"}\n```')
        assert got.value == {"verdict": "[[correct]]"}
        assert got.source == "fence"

    def test_trailing_braces_fallback(self):
        got = extract_json_block('prose and then {"a": 1}')
        assert got.value == {"a": 1}
        assert got.source == "braces"

    def test_second_fence_wins_when_first_invalid(self):
        text = "```json\n{broken\n```\n```json\n{\"a\": 2}\n```"
        assert extract_json_block(text).value == {"a": 2}

    def test_fixture_set(self):
        cases = load_cases("json_extraction.json")
        assert len(cases) == 20
        for case in cases:
            got = extract_json_block(case["text"])
            assert got.value == case["expected"], case["name"]
            assert got.source == case["source"], case["name"]

    def test_location_is_reported(self):
        text = 'x {"a": 1} y'
        got = extract_json_block(text)
        assert text[got.start : got.end] == '{"a": 1}'

    @pytest.mark.parametrize("text", ["no json here", "{unbalanced", "{} is empty prose }{"])
    def test_no_json_found(self, text):
        if text == "{} is empty prose }{":
            # {} is a valid (empty) object; make sure it parses rather than raising
            assert extract_json_block(text).value == {}
            return
        with pytest.raises(NoJsonFound):
            extract_json_block(text)


class TestExtractVerdict:
    def test_prose_token(self):
        assert extract_verdict("...therefore [[wrong]]").value == "wrong"

    def test_json_precedence(self):
        text = 'earlier [[wrong]] aside\n```json\n{"verdict": "[[correct]]"}\n```'
        assert extract_verdict(text).value == "correct"

    def test_fixture_set_parses_fully(self):
        cases = load_cases("verdict_outputs.json")
        assert len(cases) == 30
        failures = []
        for case in cases:
            try:
                got = extract_verdict(case["text"])
            except NoVerdict:
                failures.append((case["name"], "NoVerdict"))
                continue
            if got.value != case["expected"]:
                failures.append((case["name"], got.value))
        assert not failures, failures

    def test_analysis_captured(self):
        text = '```json\n{"analysis": "sum is off", "verdict": "[[wrong]]"}\n```'
        got = extract_verdict(text)
        assert got.analysis == "sum is off"
        assert got.decided_by == "model"

    @pytest.mark.parametrize(
        "text",
        ["the answer looks right", '{"verdict": "maybe"}', ""],
    )
    def test_no_verdict(self, text):
        with pytest.raises(NoVerdict):
            extract_verdict(text)

    def test_never_throws_when_token_present(self):
        import random

        rng = random.Random(17)
        chunks = ["{", "}", "```json", "```", '"verdict":', "[[", "]]", "prose", "\n"]
        for _ in range(500):
            noise = "".join(rng.choice(chunks) for _ in range(rng.randint(0, 12)))
            token = rng.choice(["[[correct]]", "[[wrong]]"])
            position = rng.randint(0, len(noise))
            text = noise[:position] + token + noise[position:]
            assert extract_verdict(text).value in ("correct", "wrong")
