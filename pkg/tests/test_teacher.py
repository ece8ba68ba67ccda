"""Teacher behaviors: judging, piece identification, ablation, simulation."""

from decimal import Decimal

import pytest

from tabletalk.ablation import (
    InfoPiece,
    RephraseUnchanged,
    resolve_question_span,
    resolve_table_locator,
    verify_reconstruction,
)
from tabletalk.answers import normalize_answer
from tabletalk.gateway import Gateway, ScriptRule, ScriptedProvider
from tabletalk.prompts import PromptPack
from tabletalk.tables import Table
from tabletalk.tasks import Task, TaskSource
from tabletalk.teacher import (
    GroundTruthLeak,
    JudgeFailure,
    Teacher,
    contains_answer,
    pieces_contain_answer,
    removed_info,
)

PACK = PromptPack.default()

TASK = Task(
    id="normalized:dev:t1:0",
    question="What was the discount rate for 2019?",
    table=Table.from_values(
        ["Year", "Discount rate", "Revenue", "Region"],
        [["2018", "4.5%", "1,000", "north"], ["2019", "5.5%", "1,250", "south"]],
    ),
    groundtruth=normalize_answer("5.5%"),
    source=TaskSource("normalized", "dev", "t1"),
)


class NeverCallProvider:
    name = "never"

    def complete(self, messages, attempt_log=None):
        raise AssertionError("model should not have been called")


def scripted(rules):
    return Gateway(ScriptedProvider([ScriptRule(**r) for r in rules]))


def make_teacher(rules):
    return Teacher(scripted(rules), PACK)


class TestJudge:
    def test_textual_equality_skips_model(self):
        teacher = Teacher(Gateway(NeverCallProvider()), PACK)
        verdict = teacher.judge(TASK.question, TASK.table, "5.5%", TASK.groundtruth)
        assert verdict.is_correct and verdict.decided_by == "pre-check"

    def test_rounding_case_precheck(self):
        teacher = Teacher(Gateway(NeverCallProvider()), PACK)
        verdict = teacher.judge(TASK.question, TASK.table, "0.59", normalize_answer("0.6"))
        assert verdict.is_correct
        assert verdict.decided_by == "pre-check"
        assert verdict.comparison_mode == "lenient"

    def test_model_wrong_verdict(self):
        teacher = make_teacher(
            [{"response": '{"analysis": "mismatch", "verdict": "[[wrong]]"}',
              "contains": ("Review the provided answer",)}]
        )
        verdict = teacher.judge(TASK.question, TASK.table, "7%", TASK.groundtruth)
        assert verdict.value == "wrong" and verdict.decided_by == "model"

    def test_reprompt_then_verdict(self):
        teacher = make_teacher(
            [
                {"response": "[[correct]]", "contains": ("Respond with the JSON format requested.",)},
                {"response": "hmm, let me think", "contains": ("Review the provided answer",)},
            ]
        )
        verdict = teacher.judge(TASK.question, TASK.table, "7%", TASK.groundtruth)
        assert verdict.is_correct

    def test_judge_failure_after_reprompt(self):
        teacher = make_teacher([{"response": "no verdict here"}])
        with pytest.raises(JudgeFailure):
            teacher.judge(TASK.question, TASK.table, "7%", TASK.groundtruth)


class TestIdentifyPieces:
    def test_two_question_pieces(self):
        teacher = make_teacher(
            [{
                "response": '```json\n[{"piece 1": "the discount rate"}, {"piece 2": "the year 2019"}]\n```',
                "contains": ("identify two necessary pieces",),
            }]
        )
        resolution = teacher.identify_pieces(TASK, "LOOKUP(`Discount rate`, `Year` == 2019)", "question")
        assert len(resolution.pieces) == 2
        assert resolution.pieces[0].span == "the discount rate"
        assert resolution.pieces[1].span == "2019"
        assert resolution.dropped == 0

    def test_column_description_binds_column(self):
        teacher = make_teacher(
            [{"response": '[{"piece 1": "the Revenue column"}]'}]
        )
        resolution = teacher.identify_pieces(TASK, "SUM(`Revenue`)", "table")
        piece = resolution.pieces[0]
        assert piece.origin == "table-column" and piece.column == "Revenue"

    def test_cell_description_binds_value(self):
        teacher = make_teacher(
            [{"response": '[{"piece 1": "the entry 1,250 for 2019"}]'}]
        )
        resolution = teacher.identify_pieces(TASK, "LOOKUP(`Revenue`, `Year` == 2019)", "table")
        piece = resolution.pieces[0]
        assert piece.origin == "table-value"
        assert (piece.column, piece.row) == ("Revenue", 1)

    def test_unresolvable_piece_dropped_with_count(self):
        teacher = make_teacher(
            [{"response": '[{"piece 1": "the Profit column"}, {"piece 2": "the Revenue column"}]'}]
        )
        resolution = teacher.identify_pieces(TASK, "SUM(`Revenue`)", "table")
        assert len(resolution.pieces) == 1
        assert resolution.dropped == 1


class TestAblate:
    QUESTION_PIECES = (
        InfoPiece("the year 2019", "question", span="for 2019"),
    )

    def test_rephrase_discount_rate(self):
        teacher = make_teacher(
            [{"response": "What was the discount rate?", "contains": ("Rephrase the original question",)}]
        )
        ablated = teacher.ablate(TASK, self.QUESTION_PIECES, "question-rephrase")
        assert ablated.question == "What was the discount rate?"
        assert ablated.ablation.rephrased_question == "What was the discount rate?"
        assert verify_reconstruction(ablated)

    def test_rephrase_unchanged_raises(self):
        teacher = make_teacher(
            [{"response": "What was the discount rate for 2019, please?"}]
        )
        with pytest.raises(RephraseUnchanged):
            teacher.ablate(TASK, self.QUESTION_PIECES, "question-rephrase")

    def test_column_delete_fraction(self):
        pieces = (InfoPiece("the Revenue column", "table-column", column="Revenue"),)
        ablated = Teacher(Gateway(NeverCallProvider()), PACK).ablate(TASK, pieces, "table-column")
        assert ablated.ablation.table_diff.fraction_removed == Decimal("0.25")
        assert "Revenue" not in ablated.table.columns
        assert verify_reconstruction(ablated)

    def test_blank_cell(self):
        pieces = (InfoPiece("rate for 2019", "table-value", column="Discount rate", row=1),)
        ablated = Teacher(Gateway(NeverCallProvider()), PACK).ablate(TASK, pieces, "table-value")
        assert ablated.table.cell("Discount rate", 1).is_empty
        assert ablated.table.cell("Discount rate", 0).text == "4.5%"
        assert verify_reconstruction(ablated)


class TestSimulateUser:
    def make_ablated(self):
        pieces = (InfoPiece("the year 2019", "question", span="for 2019"),)
        teacher = make_teacher([{"response": "What was the discount rate?"}])
        return teacher.ablate(TASK, pieces, "question-rephrase")

    def test_clarify_contains_info(self):
        ablated = self.make_ablated()
        teacher = make_teacher(
            [{"response": "I meant the rate for 2019.", "contains": ("clarification question",)}]
        )
        response = teacher.simulate_user(ablated, "clarify", "Which year do you mean?")
        assert "2019" in response

    def test_correction_references_wrong_answer(self):
        pieces = (InfoPiece("the 2019 rate", "table-value", column="Discount rate", row=1),)
        ablated = Teacher(Gateway(NeverCallProvider()), PACK).ablate(TASK, pieces, "table-value")
        teacher = make_teacher(
            [{
                "response": "No, 4.5% is the 2018 figure. The 2019 discount rate is 5.5%.",
                "contains": ("The assistant's wrong answer:", "4.5%"),
            }]
        )
        response = teacher.simulate_user(ablated, "correct", "4.5%")
        assert "4.5%" in response and "5.5%" in response

    def test_leak_guard_blocks_unneeded_reveal(self):
        ablated = self.make_ablated()  # removed info: "for 2019"; answer 5.5%
        teacher = make_teacher([{"response": "The answer is 5.5%."}])
        with pytest.raises(GroundTruthLeak):
            teacher.simulate_user(ablated, "clarify", "Which year?")

    def test_leak_exemption_when_info_is_answer(self):
        pieces = (InfoPiece("the 2019 rate", "table-value", column="Discount rate", row=1),)
        ablated = Teacher(Gateway(NeverCallProvider()), PACK).ablate(TASK, pieces, "table-value")
        assert pieces_contain_answer(ablated)
        teacher = make_teacher([{"response": "The missing value is 5.5%."}])
        response = teacher.simulate_user(ablated, "correct", "4.5%")
        assert "5.5%" in response

    def test_removed_info_snapshot(self):
        pieces = (InfoPiece("the 2019 rate", "table-value", column="Discount rate", row=1),)
        ablated = Teacher(Gateway(NeverCallProvider()), PACK).ablate(TASK, pieces, "table-value")
        info = removed_info(ablated)
        assert info == [
            {"origin": "table-value", "description": "the 2019 rate", "values": ["5.5%"]}
        ]


class TestHint:
    def test_hint_returned(self):
        pieces = (InfoPiece("the Revenue column", "table-column", column="Revenue"),)
        ablated = Teacher(Gateway(NeverCallProvider()), PACK).ablate(TASK, pieces, "table-column")
        teacher = make_teacher(
            [{"response": "A table field you need was removed; ask the user for it.",
              "contains": ("Give the assistant a short hint",)}]
        )
        assert "table field" in teacher.hint(ablated)

    def test_hint_never_contains_answer(self):
        pieces = (InfoPiece("the rate column", "table-column", column="Discount rate"),)
        ablated = Teacher(Gateway(NeverCallProvider()), PACK).ablate(TASK, pieces, "table-column")
        teacher = make_teacher([{"response": "The rate you want is 5.5%."}])
        with pytest.raises(GroundTruthLeak):
            teacher.hint(ablated)


class TestHelpers:
    def test_contains_answer_word_boundary(self):
        assert contains_answer("the value is 1,250 indeed", normalize_answer("1250"))
        assert not contains_answer("item 12507 exists", normalize_answer("1250"))

    def test_resolve_question_span_ngram(self):
        span = resolve_question_span("the discount rate mentioned", TASK.question)
        assert span == "the discount rate"

    def test_resolve_table_locator_none(self):
        assert resolve_table_locator("something unrelated", TASK.table) is None
