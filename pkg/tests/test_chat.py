from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor

import pytest

from spatialground.chat import (
    API_KEY_ENV,
    ChatClient,
    RateLimiter,
    ResponseCache,
    ScriptedTransport,
    chat,
    request_digest,
)
from spatialground.errors import UpstreamError

from .stub_server import StubChatServer

MSGS = [{"role": "system", "content": "be brief"}, {"role": "user", "content": "hello"}]


def test_identical_requests_hit_upstream_once(tmp_path):
    with StubChatServer() as stub:
        client = ChatClient(stub.url, "m", tmp_path / "cache")
        a = chat(client, MSGS)
        b = chat(client, MSGS)
    assert a == b == "echo: hello"
    assert len(stub.calls) == 1
    assert stub.calls[0]["path"] == "/v1/chat/completions"
    assert stub.calls[0]["body"]["temperature"] == 0
    assert client.upstream_calls == 1 and client.cache_hits == 1
    assert client.last_usage == {"prompt_tokens": 11, "completion_tokens": 7}


def test_cold_cache_one_call_per_distinct_request(tmp_path):
    with StubChatServer() as stub:
        client = ChatClient(stub.url, "m", tmp_path / "cache")
        client.chat(MSGS)
        client.chat(MSGS[:1] + [{"role": "user", "content": "other"}])
    assert len(stub.calls) == 2


def test_cache_key_covers_model_and_temperature():
    assert request_digest("a", MSGS, 0) != request_digest("b", MSGS, 0)
    assert request_digest("a", MSGS, 0) != request_digest("a", MSGS, 0.5)
    assert request_digest("a", MSGS, 0) == request_digest("a", [dict(m) for m in MSGS], 0)


def test_corrupted_entry_is_refetched_and_overwritten(tmp_path):
    with StubChatServer() as stub:
        client = ChatClient(stub.url, "m", tmp_path / "cache")
        client.chat(MSGS)
        (path,) = client.cache.entry_paths()
        path.write_text("{ not json")
        assert client.chat(MSGS) == "echo: hello"
        assert len(stub.calls) == 2
        assert json.loads(path.read_text())["reply"] == "echo: hello"
        client.chat(MSGS)
        assert len(stub.calls) == 2


def test_entries_are_readable_json(tmp_path):
    with StubChatServer() as stub:
        client = ChatClient(stub.url, "m", tmp_path / "cache")
        client.chat(MSGS)
    entry = json.loads(client.cache.entry_paths()[0].read_text())
    assert entry["request"]["messages"] == MSGS and entry["reply"] == "echo: hello"
    assert entry["digest"] == request_digest("m", MSGS, 0)


def test_http_error_is_upstream_error(tmp_path):
    with StubChatServer(status=500) as stub:
        client = ChatClient(stub.url, "m", tmp_path / "cache")
        with pytest.raises(UpstreamError):
            client.chat(MSGS)
    assert len(client.cache) == 0


def test_unreachable_endpoint(tmp_path):
    client = ChatClient("http://127.0.0.1:9/v1", "m", tmp_path / "c", timeout=0.5)
    with pytest.raises(UpstreamError):
        client.chat(MSGS)


def test_offline_miss_raises(tmp_path):
    with pytest.raises(UpstreamError):
        ChatClient(cache=tmp_path / "c").chat(MSGS)


def test_empty_messages_rejected(tmp_path):
    with pytest.raises(ValueError):
        ChatClient(cache=tmp_path / "c").chat([])


def test_api_key_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "sekret")
    with StubChatServer() as stub:
        ChatClient(stub.url, "m", tmp_path / "c").chat(MSGS)
    assert stub.calls[0]["auth"] == "Bearer sekret"


def test_stats_export_import(tmp_path):
    cache = ResponseCache(tmp_path / "a")
    client = ChatClient(model="m", cache=cache, transport=ScriptedTransport(["one", "two"]))
    client.chat(MSGS)
    client.chat([{"role": "user", "content": "x"}])
    client.chat(MSGS)
    assert cache.stats() == {"entries": 2, "hits": 1, "misses": 2}
    bundle = tmp_path / "bundle.jsonl"
    assert cache.export(bundle) == 2
    other = ResponseCache(tmp_path / "b")
    assert other.import_bundle(bundle) == 2
    assert ChatClient(model="m", cache=other).chat(MSGS) == "one"
    assert cache.clear() == 2 and cache.stats() == {"entries": 0, "hits": 0, "misses": 0}


def test_concurrent_identical_requests_are_consistent(tmp_path):
    with StubChatServer() as stub:
        client = ChatClient(stub.url, "m", tmp_path / "cache")
        client.chat(MSGS)
        with ThreadPoolExecutor(8) as pool:
            replies = list(pool.map(lambda _: client.chat(MSGS), range(32)))
    assert set(replies) == {"echo: hello"} and len(stub.calls) == 1


def test_rate_limiter_spacing():
    import time
    lim = RateLimiter(0.05)
    t0 = time.monotonic()
    for _ in range(3):
        lim.wait()
    assert time.monotonic() - t0 >= 0.1
