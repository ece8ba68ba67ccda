"""Answer normalization and comparison tests."""

import json
import random
import string
from decimal import Decimal
from pathlib import Path

import pytest

from tabletalk.answers import LENIENT, STRICT, answers_equal, normalize_answer

FIXTURES = Path(__file__).parent / "fixtures"


def check_expected(answer, expected):
    assert answer.kind == expected["kind"]
    if expected["kind"] == "numeric":
        assert answer.value == Decimal(expected["value"])
        assert answer.scale == expected["scale"]
    elif expected["kind"] == "text":
        assert answer.text == expected["text"]
    else:
        assert len(answer.items) == len(expected["items"])
        for item, want in zip(answer.items, expected["items"]):
            check_expected(item, want)


class TestNormalize:
    def test_currency_and_thousands(self):
        a = normalize_answer("$1,234")
        assert a.kind == "numeric" and a.value == Decimal("1234")

    def test_percent_scale(self):
        a = normalize_answer("12%")
        assert (a.kind, a.value, a.scale) == ("numeric", Decimal("12"), "percent")

    def test_golden_fixtures(self):
        cases = json.loads((FIXTURES / "normalize_golden.json").read_text())
        assert len(cases) == 50
        for case in cases:
            check_expected(normalize_answer(case["input"]), case)

    def test_golden_fixtures_idempotent(self):
        cases = json.loads((FIXTURES / "normalize_golden.json").read_text())
        for case in cases:
            first = normalize_answer(case["input"])
            again = normalize_answer(first.canonical)
            check_expected(again, case)

    def test_idempotence_randomized(self):
        rng = random.Random(99)
        alphabet = string.ascii_letters + string.digits + " ,.%$-()'\""
        for _ in range(500):
            raw = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 25)))
            first = normalize_answer(raw)
            again = normalize_answer(first.canonical)
            assert again.kind == first.kind, raw
            assert again.canonical == first.canonical, raw

    def test_list_answers_from_sequences(self):
        a = normalize_answer(["2", "7"])
        assert a.kind == "list"
        assert [i.value for i in a.items] == [Decimal(2), Decimal(7)]


class TestEquality:
    def test_rounding_case_lenient_only(self):
        assert answers_equal("0.59", "0.6", LENIENT) is True
        assert answers_equal("0.59", "0.6", STRICT) is False

    def test_identical_strings_both_modes(self):
        for raw in ("42", "net income", "1,2,3", "12%"):
            assert answers_equal(raw, raw, STRICT)
            assert answers_equal(raw, raw, LENIENT)

    def test_percent_fraction_never_converted(self):
        assert answers_equal("12%", "0.12", STRICT) is False
        assert answers_equal("12%", "0.12", LENIENT) is False

    def test_scale_words_never_expanded(self):
        assert answers_equal("3 million", "3000000", LENIENT) is False
        assert answers_equal("3 million", "3 million", STRICT) is True

    def test_relative_tolerance(self):
        assert answers_equal("1000000", "1000000.5", STRICT) is True
        assert answers_equal("1000000", "1001000", STRICT) is False

    def test_lists_compare_as_multisets(self):
        assert answers_equal("a, b", "b, a", STRICT) is True
        assert answers_equal("a, b", "a, c", STRICT) is False
        assert answers_equal("a, b", "a", STRICT) is False

    def test_lenient_rounds_to_coarser_operand(self):
        assert answers_equal("1234.4", "1234", LENIENT) is True
        assert answers_equal("1234.6", "1234", LENIENT) is False
        assert answers_equal("0.595", "0.60", LENIENT) is True

    def test_numeric_vs_text_unequal(self):
        assert answers_equal("5", "five", LENIENT) is False

    def test_symmetry_and_superset_randomized(self):
        rng = random.Random(4321)
        pool = [
            "0.59", "0.6", "0.595", "12%", "0.12", "12", "1234", "1,234",
            "1234.4", "a, b", "b, a", "net income", "Net Income", "3 million",
            "3000000", "-5", "(5)", "7.00", "7",
        ]
        for _ in range(400):
            x, y = rng.choice(pool), rng.choice(pool)
            for mode in (STRICT, LENIENT):
                assert answers_equal(x, y, mode) == answers_equal(y, x, mode)
            if answers_equal(x, y, STRICT):
                assert answers_equal(x, y, LENIENT)

    def test_reflexive(self):
        for raw in ("0.59", "a, b", "12%", "(5)", "x and y"):
            assert answers_equal(raw, raw, STRICT)
            assert answers_equal(raw, raw, LENIENT)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            answers_equal("1", "1", "fuzzy")
