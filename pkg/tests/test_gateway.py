"""Gateway, scripted provider, retry, and transcript/replay tests."""

import json

import pytest

from tabletalk.gateway import (
    ChatMessage,
    Gateway,
    HttpProvider,
    ModelEndpoint,
    ReplayProvider,
    ScriptMiss,
    ScriptRule,
    ScriptedProvider,
    TranscriptLog,
    TransportError,
)


def msg(content, role="user"):
    return ChatMessage(role, content)


ENDPOINT = ModelEndpoint(
    base_url="http://fake.local/v1", model="fake-model", retry_budget=2, backoff_base_s=0.0
)


class FlakyTransport:
    """Fails n times, then returns a canned completion."""

    def __init__(self, failures, text="hello"):
        self.failures = failures
        self.text = text
        self.calls = 0

    def __call__(self, url, payload, headers, timeout):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportError("injected failure")
        return {"choices": [{"message": {"content": self.text}}]}


class TestScriptedProvider:
    def test_substring_rule(self):
        provider = ScriptedProvider(
            [ScriptRule(response="it was 4.5%", contains=("discount rate",))]
        )
        assert provider.complete([msg("What was the discount rate?")]) == "it was 4.5%"

    def test_strict_miss(self):
        provider = ScriptedProvider(
            [ScriptRule(response="x", contains=("nope",))], strict=True
        )
        with pytest.raises(ScriptMiss):
            provider.complete([msg("unrelated")])

    def test_strict_requires_unique_match(self):
        provider = ScriptedProvider(
            [
                ScriptRule(response="a", contains=("q",)),
                ScriptRule(response="b", contains=("q",)),
            ],
            strict=True,
        )
        with pytest.raises(ScriptMiss):
            provider.complete([msg("q")])

    def test_ordered_first_match_wins(self):
        provider = ScriptedProvider(
            [
                ScriptRule(response="specific", contains=("alpha", "beta")),
                ScriptRule(response="generic", contains=("alpha",)),
            ]
        )
        assert provider.complete([msg("alpha beta")]) == "specific"
        assert provider.complete([msg("alpha only")]) == "generic"

    def test_not_contains(self):
        provider = ScriptedProvider(
            [
                ScriptRule(response="ablated", contains=("Q1",), not_contains=("Revenue",)),
                ScriptRule(response="original", contains=("Q1",)),
            ]
        )
        assert provider.complete([msg("Q1 with Revenue column")]) == "original"
        assert provider.complete([msg("Q1 without that column")]) == "ablated"

    def test_deterministic(self):
        rules = [ScriptRule(response="r", contains=("x",))]
        a = ScriptedProvider(rules).complete([msg("x")])
        b = ScriptedProvider(rules).complete([msg("x")])
        assert a == b


class TestHttpRetries:
    def test_two_failures_then_success(self, tmp_path):
        transport = FlakyTransport(failures=2)
        provider = HttpProvider(ENDPOINT, api_key="k", transport=transport)
        log = TranscriptLog(tmp_path / "transcript.jsonl")
        gateway = Gateway(provider, transcript=log)
        assert gateway.complete_chat([msg("hi")]) == "hello"
        rows = [
            json.loads(line)
            for line in (tmp_path / "transcript.jsonl").read_text().splitlines()
        ]
        assert [r["attempt"] for r in rows] == [1, 2, 3]
        assert rows[0]["response"] is None and rows[0]["error"]
        assert rows[2]["response"] == "hello"

    def test_budget_exhausted(self):
        transport = FlakyTransport(failures=10)
        provider = HttpProvider(ENDPOINT, api_key="k", transport=transport)
        with pytest.raises(TransportError):
            provider.complete([msg("hi")])
        assert transport.calls == 3  # initial + 2 retries

    def test_zero_retry_budget(self):
        endpoint = ModelEndpoint(
            base_url="http://fake.local/v1", model="m", retry_budget=0
        )
        transport = FlakyTransport(failures=1)
        with pytest.raises(TransportError):
            HttpProvider(endpoint, api_key="k", transport=transport).complete([msg("x")])
        assert transport.calls == 1


class TestReplay:
    def test_replay_reproduces_responses(self, tmp_path):
        provider = ScriptedProvider(
            [ScriptRule(response="the answer is 42", contains=("meaning",))],
            name="scripted:student",
        )
        log = TranscriptLog(tmp_path / "t.jsonl")
        gateway = Gateway(provider, transcript=log)
        messages = [msg("what is the meaning of life?")]
        original = gateway.complete_chat(messages)

        replay = ReplayProvider(tmp_path / "t.jsonl", name="scripted:student")
        assert replay.complete(messages) == original

    def test_replay_miss(self, tmp_path):
        (tmp_path / "t.jsonl").write_text("", encoding="utf-8")
        replay = ReplayProvider(tmp_path / "t.jsonl", name="x")
        with pytest.raises(ScriptMiss):
            replay.complete([msg("never seen")])


class TestMessages:
    def test_empty_content_rejected(self):
        with pytest.raises(ValueError):
            ChatMessage("user", "")

    def test_bad_role_rejected(self):
        with pytest.raises(ValueError):
            ChatMessage("wizard", "hi")

    def test_empty_message_list_rejected(self):
        gateway = Gateway(ScriptedProvider([]))
        with pytest.raises(ValueError):
            gateway.complete_chat([])
