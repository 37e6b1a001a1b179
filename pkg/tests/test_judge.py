import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conciserl.errors import BudgetExceededError, TransportError, UnparseableReplyError
from conciserl.judge import (
    API_KEY_ENV,
    JudgeCache,
    JudgeClient,
    JudgeConfig,
    cache_key,
    default_system_prompt,
    mock_judge,
    parse_score,
)
from conciserl.policy import END, FILLER, STEP, Trace, ans


def _trace(tokens):
    return Trace(tuple(tokens), (0.0,) * len(tokens), 0)


def _reply(content="7", prompt_tokens=50, completion_tokens=1):
    return httpx.Response(200, json={
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    })


def _client(handler, cache=None, **cfg):
    cfg.setdefault("endpoint_url", "http://judge.test/v1")
    cfg.setdefault("retry_backoff", 0.0)
    return JudgeClient(JudgeConfig(**cfg), cache, transport=httpx.MockTransport(handler), api_key="secret")


@pytest.mark.parametrize(
    "reply, score",
    [("7", 7), ("Score: 7", 7), ("10/10", 10), (" 3.\n", 3), ("0 issues, score 8", 8), ("I rate it 1", 1)],
)
def test_parse_score(reply, score):
    assert parse_score(reply) == score


@pytest.mark.parametrize("reply", ["", "very concise", "11", "score: 0", "-"])
def test_parse_score_rejects(reply):
    with pytest.raises(UnparseableReplyError) as info:
        parse_score(reply)
    assert info.value.raw_reply == reply


@pytest.mark.parametrize(
    "tokens, score",
    [
        ([ans(5), END], 10),
        ([FILLER, FILLER, FILLER, FILLER, ans(7), END], 2),
        ([STEP, ans(3), END], 5),
        ([END], 1),
        ([FILLER] * 16, 1),
    ],
)
def test_mock_judge(tokens, score):
    assert mock_judge(_trace(tokens)) == score


def test_system_prompt_ships_with_package():
    text = default_system_prompt()
    assert "1" in text and "10" in text
    assert JudgeConfig().system_prompt == text


def test_wire_format_and_auth():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return _reply("9")

    with _client(handler, model_name="judge-x", max_reply_tokens=4) as client:
        v = client.score_trace("step \\boxed{3}", "What is 1 + 2?")
    assert seen["url"] == "http://judge.test/v1/chat/completions"
    assert seen["auth"] == "Bearer secret"
    body = seen["body"]
    assert body["model"] == "judge-x" and body["temperature"] == 0 and body["max_tokens"] == 4
    assert body["messages"][0]["role"] == "system"
    assert "What is 1 + 2?" in body["messages"][1]["content"]
    assert "step \\boxed{3}" in body["messages"][1]["content"]
    assert v.score == 9 and v.normalized == 0.9 and not v.from_cache


def test_api_key_from_environment(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "from-env")
    seen = []

    def handler(request):
        seen.append(request.headers.get("authorization"))
        return _reply()

    cfg = JudgeConfig(endpoint_url="http://judge.test/v1")
    with JudgeClient(cfg, transport=httpx.MockTransport(handler)) as client:
        client.score_trace("t", "p")
    assert seen == ["Bearer from-env"]


def test_cost_accounting():
    with _client(lambda r: _reply("5", 1000, 10), prompt_token_price=1e-3, reply_token_price=2e-3) as client:
        v = client.score_trace("t", "p")
    assert v.cost == pytest.approx(1.02)
    assert client.total_cost == pytest.approx(1.02)
    assert client.live_calls == 1


def test_cache_persists_across_clients(tmp_path):
    path = tmp_path / "cache.jsonl"
    calls = []

    def handler(request):
        calls.append(1)
        return _reply("6")

    with _client(handler, JudgeCache(path)) as c1:
        c1.score_trace("t", "p")
        c1.score_trace("t", "p")
    assert len(calls) == 1
    rec = json.loads(path.read_text().splitlines()[0])
    assert rec["score"] == 6 and rec["raw"] == "6" and "ts" in rec
    with _client(handler, JudgeCache(path)) as c2:
        v = c2.score_trace("t", "p")
    assert len(calls) == 1 and v.from_cache and v.cost == 0 and c2.cache_hits == 1


def test_cache_key_depends_on_every_field():
    base = cache_key("m", "s", "p", "t")
    assert len({base, cache_key("m2", "s", "p", "t"), cache_key("m", "s2", "p", "t"),
                cache_key("m", "s", "p2", "t"), cache_key("m", "s", "p", "t2")}) == 5


def test_budget_cap_blocks_new_calls_but_not_cache():
    calls = []

    def handler(request):
        calls.append(1)
        return _reply("4", 1000, 0)

    with _client(handler, budget_cap=0.5e-3, prompt_token_price=1e-6) as client:
        client.score_trace("a", "p")  # spends 1e-3, over the cap afterwards
        with pytest.raises(BudgetExceededError):
            client.score_trace("b", "p")
        assert client.score_trace("a", "p").from_cache
    assert len(calls) == 1


def test_retries_then_success():
    statuses = iter([503, 429, 200])

    def handler(request):
        code = next(statuses)
        return _reply("8") if code == 200 else httpx.Response(code)

    with _client(handler, max_retries=3) as client:
        assert client.score_trace("t", "p").score == 8


def test_retries_exhausted():
    with _client(lambda r: httpx.Response(500), max_retries=2) as client:
        with pytest.raises(TransportError):
            client.score_trace("t", "p")


def test_client_error_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401, text="bad key")

    with _client(handler, max_retries=3) as client:
        with pytest.raises(TransportError):
            client.score_trace("t", "p")
    assert len(calls) == 1


def test_network_error_retried():
    attempts = []

    def handler(request):
        attempts.append(1)
        if len(attempts) < 2:
            raise httpx.ConnectError("down")
        return _reply("2")

    with _client(handler) as client:
        assert client.score_trace("t", "p").score == 2


def test_unparseable_reply_is_charged_and_not_cached():
    with _client(lambda r: _reply("looks fine")) as client:
        with pytest.raises(UnparseableReplyError) as info:
            client.score_trace("t", "p")
        assert info.value.raw_reply == "looks fine"
        assert client.live_calls == 1 and len(client.cache) == 0


def test_score_many_keeps_order_and_errors():
    def handler(request):
        text = json.loads(request.content)["messages"][1]["content"]
        return _reply("prose" if "bad" in text else str(len(text) % 10 + 1))

    items = [(f"trace {i}", "p") for i in range(6)] + [("bad", "p")]
    with _client(handler, parallelism_limit=3) as client:
        out = client.score_many(items)
    assert [v.score for v in out[:6]] == [len(f"p\n\ntrace {i}") % 10 + 1 for i in range(6)]
    assert isinstance(out[6], UnparseableReplyError)


def test_cache_skips_torn_line(tmp_path):
    path = tmp_path / "cache.jsonl"
    path.write_text('{"key": "a", "score": 3, "raw": "3", "prompt_tokens": 1, "reply_tokens": 1}\n{"key": "b", "sc')
    cache = JudgeCache(path)
    assert len(cache) == 1 and cache.get("a")["score"] == 3


@given(st.integers(1, 10), st.text(alphabet="abc :.", max_size=20))
def test_parse_score_finds_embedded_score(score, prefix):
    assert parse_score(f"{prefix} {score}") == score
