import json
import random

import numpy as np
import pytest

from conftest import API_KEY
from csk import llmgateway
from csk.llmgateway import (
    AuthError,
    Gateway,
    GatewayConfig,
    HttpResponse,
    MalformedResponse,
    RateLimitError,
    RemoteEmbedder,
    RequestRejected,
    ResponseCache,
)


class Sleeps:
    def __init__(self):
        self.calls = []

    def __call__(self, s):
        self.calls.append(s)


def make_gateway(srv, tmp_path=None, sleep=None, **kw):
    cfg = GatewayConfig(
        base_url=srv.base_url,
        model_name="fake-model",
        cache_path=str(tmp_path / "cache.jsonl") if tmp_path else None,
        **kw,
    )
    return Gateway(cfg, sleep=sleep or Sleeps(), rng=random.Random(1))


def test_complete_and_cache(fake_server, tmp_path):
    fake_server.answers["hello"] = "<C>hi</C>"
    gw = make_gateway(fake_server, tmp_path)
    assert gw.complete("hello") == "<C>hi</C>"
    assert gw.network_calls == 1
    req = fake_server.requests[0]
    assert req["path"] == "/v1/chat/completions"
    assert req["payload"]["temperature"] == 0 and req["payload"]["model"] == "fake-model"

    warm = make_gateway(fake_server, tmp_path)
    assert warm.complete("hello") == "<C>hi</C>"
    assert warm.network_calls == 0
    assert len(fake_server.requests) == 1


def test_cache_key_depends_on_model_and_temperature():
    a = llmgateway.prompt_hash("p", "m", 0)
    assert a == llmgateway.prompt_hash("p", "m", 0.0)
    assert a != llmgateway.prompt_hash("p", "m2", 0)
    assert a != llmgateway.prompt_hash("p", "m", 0.7)
    assert len(a) == 16


def test_retry_schedule_on_429(fake_server):
    fake_server.script = [429, 429]
    sleeps = Sleeps()
    gw = make_gateway(fake_server, sleep=sleeps)
    assert gw.complete("x") == "x"
    assert gw.network_calls == 3
    assert len(sleeps.calls) == 2
    assert sleeps.calls[0] == pytest.approx(1.0, rel=0.1)
    assert sleeps.calls[1] == pytest.approx(2.0, rel=0.1)


def test_retries_exhausted(fake_server):
    fake_server.script = [503] * 10
    gw = make_gateway(fake_server, max_retries=2)
    with pytest.raises(llmgateway.ServerError):
        gw.complete("x")
    assert gw.network_calls == 3


def test_auth_error_not_retried(fake_server, monkeypatch):
    monkeypatch.setenv("CSK_API_KEY", "wrong")
    gw = make_gateway(fake_server)
    with pytest.raises(AuthError):
        gw.complete("x")
    assert gw.network_calls == 1


def test_missing_key(fake_server, monkeypatch):
    monkeypatch.delenv("CSK_API_KEY")
    with pytest.raises(AuthError, match="CSK_API_KEY"):
        make_gateway(fake_server).complete("x")


def test_malformed_and_rejected(fake_server):
    fake_server.malformed = True
    with pytest.raises(MalformedResponse):
        make_gateway(fake_server).complete("x")
    fake_server.malformed = False
    fake_server.script = [400]
    with pytest.raises(RequestRejected):
        make_gateway(fake_server).complete("x")


def test_bad_shape_is_malformed():
    class T:
        def post(self, url, headers, payload, timeout):
            return HttpResponse(200, json.dumps({"choices": []}))

    gw = Gateway(GatewayConfig("http://unused", "m"), transport=T())
    with pytest.MonkeyPatch.context() as mp:
        mp.setenv("CSK_API_KEY", "k")
        with pytest.raises(MalformedResponse):
            gw.complete("x")


def test_batch_isolates_failures(fake_server):
    fake_server.answers["bad"] = "unused"
    gw = make_gateway(fake_server, max_retries=0, max_in_flight=1)
    fake_server.script = [200, 401]
    res = gw.complete_batch(["a", "bad", "c"])
    assert res.responses[0] == "a" and res.responses[2] == "c"
    assert res.failed_indices == [1]
    assert isinstance(res.errors[1], AuthError)
    assert not res.ok
    with pytest.raises(ValueError):
        gw.complete_batch([])


def test_batch_respects_max_in_flight(fake_server):
    fake_server.delay = 0.05
    gw = make_gateway(fake_server, max_in_flight=2)
    prompts = [f"p{i}" for i in range(10)]
    res = gw.complete_batch(prompts)
    assert res.responses == prompts
    assert fake_server.max_in_flight <= 2
    assert fake_server.max_in_flight == 2


def test_embed_remote_normalises_and_caches(fake_server, tmp_path):
    gw = make_gateway(fake_server, tmp_path, embedding_model="fake-embed")
    vecs = gw.embed_remote(["abcd", "abcd", "x"])
    assert all(abs(np.linalg.norm(v) - 1) < 1e-12 for v in vecs)
    assert np.allclose(vecs[0], np.array([4, 3, 4]) / np.sqrt(41))
    assert fake_server.requests[-1]["payload"] == {"model": "fake-embed", "input": ["abcd", "x"]}
    gw2 = make_gateway(fake_server, tmp_path, embedding_model="fake-embed")
    again = RemoteEmbedder(gw2).embed(["x", "abcd"])
    assert gw2.network_calls == 0
    assert np.allclose(again[1], vecs[0])


def test_key_never_persisted(fake_server, tmp_path):
    gw = make_gateway(fake_server, tmp_path)
    gw.complete("secret check")
    gw.embed_remote(["t"])
    assert API_KEY not in (tmp_path / "cache.jsonl").read_text()
    assert API_KEY not in json.dumps(gw.cfg.to_dict())


def test_cache_last_record_wins(tmp_path):
    path = tmp_path / "c.jsonl"
    c = ResponseCache(path)
    rec = llmgateway.CompletionRecord("k", "p", "one", "m", "t")
    c.put(rec)
    c.put(llmgateway.CompletionRecord("k", "p", "two", "m", "t"))
    assert len(path.read_text().splitlines()) == 2
    assert ResponseCache(path).get("k").response == "two"


def test_config_validation():
    with pytest.raises(ValueError):
        GatewayConfig("u", "m", temperature=-1)
    with pytest.raises(ValueError):
        GatewayConfig("u", "m", max_in_flight=0)


def test_backoff_bounds():
    gw = Gateway(GatewayConfig("u", "m"), transport=object(), rng=random.Random(5))
    for attempt in range(5):
        d = gw.backoff(attempt)
        assert 0.9 * 2 ** attempt <= d <= 1.1 * 2 ** attempt


def test_module_functions(fake_server):
    cfg = GatewayConfig(fake_server.base_url, "m")
    assert llmgateway.complete("q", cfg) == "q"
    assert llmgateway.complete_batch(["a", "b"], cfg).responses == ["a", "b"]
    assert len(llmgateway.embed_remote(["a"], cfg)) == 1
