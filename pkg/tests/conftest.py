"""Shared scripted scenario: a two-task corpus forged into a curriculum.

alpha: solved originally, broken by a table-value ablation, recovered in
both flows (one candidate, one Cl entry, one Co entry).
beta: solved originally and still solved after ablation (no candidate),
so it only contributes a negative to benchmark runs.
"""

import pytest

from tabletalk.answers import normalize_answer
from tabletalk.dialogue import RunContext, Student
from tabletalk.gateway import Gateway, ScriptRule, ScriptedProvider
from tabletalk.prompts import PromptPack
from tabletalk.store import build_curriculum
from tabletalk.tables import Table
from tabletalk.tasks import Task, TaskSource
from tabletalk.teacher import Teacher

PACK = PromptPack.default()

ALPHA = Task(
    id="normalized:dev:alpha:0",
    question="What was the rate for 2019 alphaQ?",
    table=Table.from_values(["Year", "Rate"], [["2018", "5"], ["2019", "7"]]),
    groundtruth=normalize_answer("7"),
    source=TaskSource("normalized", "dev", "alpha"),
)

BETA = Task(
    id="normalized:dev:beta:0",
    question="How many betaQ regions are listed?",
    table=Table.from_values(["Region"], [["north"], ["south"], ["east"]]),
    groundtruth=normalize_answer("3"),
    source=TaskSource("normalized", "dev", "beta"),
)

FORGE_STUDENT_RULES = [
    ScriptRule(response="Answer: 7", contains=("userinfo-A-cl",)),
    ScriptRule(response="Answer: 7", contains=("userinfo-A-co",)),
    ScriptRule(
        response="Which rate value is missing alphaQ-qcl?",
        contains=("Ask the user exactly one", "alphaQ"),
    ),
    ScriptRule(
        response="```tableprog\nLOOKUP(`Rate`, `Year` == 2019)\n```",
        contains=("alphaQ",),
    ),
    ScriptRule(response="Answer: 3", contains=("betaQ",)),
]

FORGE_TEACHER_RULES = [
    ScriptRule(
        response='{"analysis": "mismatch", "verdict": "[[wrong]]"}',
        contains=("Review the provided answer",),
    ),
    ScriptRule(
        response='[{"piece 1": "the value 7 in row 2"}]',
        contains=("Look at the solution code", "alphaQ"),
    ),
    ScriptRule(
        response='[{"piece 1": "the value north"}]',
        contains=("Look at the solution code", "betaQ"),
    ),
    ScriptRule(
        response="A needed rate value was removed from the table; ask the user for it.",
        contains=("Give the assistant a short hint", "alphaQ"),
    ),
    ScriptRule(
        response="userinfo-A-cl: the 2019 rate is 7.",
        contains=("asked a clarification question", "alphaQ-qcl"),
    ),
    ScriptRule(
        response="userinfo-A-co: that is not right, the 2019 rate is 7.",
        contains=("The assistant's wrong answer:", "alphaQ"),
    ),
]


def make_run_context():
    return RunContext(
        models={"student": "scripted:student", "teacher": "scripted:teacher"},
        seeds={"sample": 0},
        prompt_pack_hash=PACK.content_hash,
    )


def forge_run(run_dir, tasks=(ALPHA, BETA), workers=1):
    student = Student(
        Gateway(ScriptedProvider(FORGE_STUDENT_RULES, name="scripted:student")), PACK
    )
    teacher = Teacher(
        Gateway(ScriptedProvider(FORGE_TEACHER_RULES, name="scripted:teacher")), PACK
    )
    return build_curriculum(
        list(tasks),
        student,
        teacher,
        make_run_context(),
        ["table-value"],
        run_dir,
        workers=workers,
    )


@pytest.fixture(scope="session")
def alpha_beta_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("curriculum") / "run"
    return forge_run(run_dir)
