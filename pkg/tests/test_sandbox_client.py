"""Primary-side sandbox client integration (skipped when the sandbox
package is not installed; the rest of the suite never needs it)."""

import sys

import pytest

pytest.importorskip("table_sandbox")

from tabletalk.dialogue import Student, extract_answer_forms
from tabletalk.gateway import Gateway, ScriptRule, ScriptedProvider
from tabletalk.prompts import PromptPack
from tabletalk.sandbox_client import SandboxClient
from tabletalk.tableprog import run_program
from tabletalk.tables import Table

COMMAND = [sys.executable, "-m", "table_sandbox"]

TABLE = Table.from_values(["Num", "Tag"], [["5", "x"], ["7", "y"], ["9", "z"]])


def make_client(**kwargs):
    return SandboxClient(command=COMMAND, **kwargs)


class TestClient:
    def test_script_matches_dsl_sum(self):
        client = make_client()
        result = client.run("print(sum(int(r[0]) for r in rows))", TABLE)
        assert result.ok
        dsl = run_program("SUM(`Num`)", TABLE)
        assert result.value.value == dsl.value.value

    def test_timeout_maps_to_timeout_kind(self):
        client = make_client(timeout_ms=600)
        result = client.run("while True:\n    pass", TABLE)
        assert not result.ok
        assert result.failure.kind == "timeout"

    def test_script_error_maps_to_type(self):
        client = make_client()
        result = client.run("undefined_symbol", TABLE)
        assert result.failure.kind == "type"

    def test_syntax_error_maps_to_parse(self):
        client = make_client()
        result = client.run("def ???", TABLE)
        assert result.failure.kind == "parse"

    def test_missing_command_is_failure_not_exception(self):
        client = SandboxClient(command=["/nonexistent/sandbox"])
        result = client.run("print(1)", TABLE)
        assert not result.ok


class TestSolvePathWithSandbox:
    def test_fenced_script_routed(self):
        attempt = extract_answer_forms(
            "Using code:\n```python\nprint(sum(int(r[0]) for r in rows))\n```",
            TABLE,
            sandbox=make_client(),
        )
        assert attempt.method == "script"
        assert str(attempt.answer.value) == "21"

    def test_student_attempt_via_gateway(self):
        student = Student(
            Gateway(
                ScriptedProvider(
                    [ScriptRule(response="```python\nprint(len(rows))\n```")],
                    name="scripted:student",
                )
            ),
            PromptPack.default(),
            sandbox=make_client(),
        )
        attempt = student.attempt(
            list(PromptPack.default().render("solve", table="T", question="How many rows?").messages),
            TABLE,
        )
        assert attempt.method == "script"
        assert str(attempt.answer.value) == "3"
