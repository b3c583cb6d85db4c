import json

import pytest
import requests
from hypothesis import given
from hypothesis import strategies as st

from reflectgrade.backend import (
    BackendConfig,
    ChatRequest,
    ChatResponse,
    HttpBackend,
    ScriptedBackend,
    UsageRecord,
    ZERO_USAGE,
    accumulate_usage,
    make_backend,
)
from reflectgrade.errors import BackendError, ScriptError

usage_records = st.builds(
    UsageRecord,
    st.integers(0, 10_000),
    st.integers(0, 10_000),
    st.floats(0, 100, allow_nan=False),
)


def request(role="Evaluator", key="r1"):
    return ChatRequest(
        role_name=role,
        system_prompt="system",
        user_prompt="user",
        script_key=key,
    )


class TestUsageRecord:
    def test_total_tokens(self):
        assert UsageRecord(1216, 2283, 0.0).total_tokens == 3499

    def test_accumulate_single_record(self):
        total = accumulate_usage([UsageRecord(1216, 2283, 0.0)])
        assert total.total_tokens == 3499

    def test_accumulate_empty(self):
        assert accumulate_usage([]) == UsageRecord(0, 0, 0.0)

    def test_accumulate_pair(self):
        total = accumulate_usage([UsageRecord(1, 2, 0.5), UsageRecord(3, 4, 0.5)])
        assert total == UsageRecord(4, 6, 1.0)

    def test_negative_rejected(self):
        with pytest.raises(BackendError):
            UsageRecord(-1, 0, 0.0)
        with pytest.raises(BackendError):
            UsageRecord(0, 0, float("nan"))

    @given(usage_records, usage_records, usage_records)
    def test_associative(self, a, b, c):
        left = accumulate_usage([accumulate_usage([a, b]), c])
        right = accumulate_usage([a, accumulate_usage([b, c])])
        assert left.input_tokens == right.input_tokens
        assert left.output_tokens == right.output_tokens
        assert left.latency == pytest.approx(right.latency)

    @given(usage_records)
    def test_zero_identity(self, record):
        assert accumulate_usage([ZERO_USAGE, record]) == record
        assert accumulate_usage([record, ZERO_USAGE]) == record


class TestRequestResponseValidation:
    def test_temperature_bounds(self):
        with pytest.raises(BackendError):
            ChatRequest("r", "s", "u", temperature=2.5)

    def test_empty_prompt_rejected(self):
        with pytest.raises(BackendError):
            ChatRequest("r", "", "u")

    def test_empty_text_needs_refusal_flag(self):
        with pytest.raises(BackendError):
            ChatResponse(text="", usage=ZERO_USAGE)
        assert ChatResponse(text="", usage=ZERO_USAGE, refused=True).refused

    def test_config_http_requires_url_and_model(self):
        with pytest.raises(BackendError, match="base_url"):
            BackendConfig(kind="http")

    def test_config_scripted_requires_script(self):
        with pytest.raises(BackendError, match="script_path"):
            BackendConfig(kind="scripted")


class TestScriptedBackend:
    def test_keyed_response_and_usage(self):
        backend = ScriptedBackend(
            {"Evaluator/r1": {"text": "scripted!", "input_tokens": 10, "output_tokens": 20}}
        )
        response = backend.complete(request())
        assert response.text == "scripted!"
        assert response.usage == UsageRecord(10, 20, 0.0)

    def test_repeated_calls_identical(self):
        backend = ScriptedBackend(
            {"Evaluator/r1": {"text": "same", "input_tokens": 1, "output_tokens": 2}}
        )
        first = backend.complete(request())
        second = backend.complete(request())
        assert first == second

    def test_missing_entry(self):
        backend = ScriptedBackend({})
        with pytest.raises(ScriptError, match="no script entry for Evaluator/r1"):
            backend.complete(request())

    def test_sequence_consumed_in_order_then_repeats(self):
        backend = ScriptedBackend(
            {
                "Evaluator/r1": [
                    {"text": "first", "output_tokens": 1},
                    {"text": "second", "output_tokens": 1},
                ]
            }
        )
        texts = [backend.complete(request()).text for _ in range(3)]
        assert texts == ["first", "second", "second"]

    def test_from_file(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(
            json.dumps({"Evaluator/r1": {"text": "hi", "output_tokens": 1}}),
            encoding="utf-8",
        )
        backend = ScriptedBackend.from_file(path)
        assert backend.complete(request()).text == "hi"

    def test_make_backend_dispatch(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text("{}", encoding="utf-8")
        scripted = make_backend(BackendConfig(kind="scripted", script_path=str(path)))
        assert isinstance(scripted, ScriptedBackend)
        http = make_backend(
            BackendConfig(kind="http", base_url="https://x.test", model_name="m")
        )
        assert isinstance(http, HttpBackend)


class FakeResponse:
    def __init__(self, status_code=200, body=None, text=""):
        self.status_code = status_code
        self._body = body if body is not None else {}
        self.text = text

    def json(self):
        return self._body


def ok_body(text="hello", prompt_tokens=10, completion_tokens=20):
    return {
        "choices": [{"message": {"content": text}}],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
        },
    }


class FakeSession:
    """Yields queued outcomes; exceptions are raised, responses returned."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = 0

    def post(self, url, headers=None, json=None, timeout=None):
        self.calls += 1
        outcome = self.outcomes.pop(0) if self.outcomes else self._last
        self._last = outcome
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def http_backend(outcomes, max_retries=3, monkeypatch=None):
    config = BackendConfig(
        kind="http",
        base_url="https://example.test/v1",
        model_name="test-model",
        api_key_env="TEST_API_KEY",
        max_retries=max_retries,
    )
    sleeps = []
    session = FakeSession(outcomes)
    backend = HttpBackend(config, session=session, sleeper=sleeps.append)
    return backend, session, sleeps


class TestHttpBackend:
    @pytest.fixture(autouse=True)
    def api_key(self, monkeypatch):
        monkeypatch.setenv("TEST_API_KEY", "sekrit")

    def test_success_parses_text_and_usage(self):
        backend, session, _ = http_backend([FakeResponse(200, ok_body("hi", 7, 9))])
        response = backend.complete(request())
        assert response.text == "hi"
        assert response.usage.input_tokens == 7
        assert response.usage.output_tokens == 9
        assert session.calls == 1

    def test_429_twice_then_success(self):
        backend, session, sleeps = http_backend(
            [FakeResponse(429), FakeResponse(429), FakeResponse(200, ok_body())],
            max_retries=3,
        )
        response = backend.complete(request())
        assert response.text == "hello"
        assert session.calls == 3
        assert len(sleeps) == 2
        # exponential with +/-20% jitter: 1s then 2s nominal
        assert 0.8 <= sleeps[0] <= 1.2
        assert 1.6 <= sleeps[1] <= 2.4

    def test_timeout_without_retries(self):
        backend, session, _ = http_backend([requests.Timeout()], max_retries=0)
        with pytest.raises(BackendError, match="timeout"):
            backend.complete(request())
        assert session.calls == 1

    def test_retry_count_never_exceeds_budget(self):
        for budget in (0, 1, 3):
            backend, session, _ = http_backend([FakeResponse(503)], max_retries=budget)
            with pytest.raises(BackendError):
                backend.complete(request())
            assert session.calls == budget + 1

    def test_auth_error_not_retried(self):
        backend, session, _ = http_backend([FakeResponse(401)], max_retries=3)
        with pytest.raises(BackendError, match="authentication"):
            backend.complete(request())
        assert session.calls == 1

    def test_missing_api_key(self, monkeypatch):
        monkeypatch.delenv("TEST_API_KEY")
        backend, _, _ = http_backend([FakeResponse(200, ok_body())])
        with pytest.raises(BackendError, match="authentication"):
            backend.complete(request())

    def test_refusal_allows_empty_text(self):
        body = {
            "choices": [{"message": {"content": "", "refusal": "cannot comply"}}],
            "usage": {"prompt_tokens": 5, "completion_tokens": 0},
        }
        backend, _, _ = http_backend([FakeResponse(200, body)])
        response = backend.complete(request())
        assert response.refused
        assert response.text == ""
