import json
import logging

import httpx
import pytest

from rectune.agents import LoopContext, LoopSettings, actor_propose, run_round
from rectune.agents.actor import llm_propose
from rectune.errors import ProposalError
from rectune.llmclient import (AuthError, ChatClient, ChatRequest, EndpointConfig, LLMError, ResponseError,
                               TransportError, extract_json_array, extract_json_object)

SECRET = "sk-test-5f1e2d9c-do-not-log"
URL = "https://llm.invalid/v1/chat"


def _client(handler, key=SECRET):
    sleeps = []
    c = ChatClient(EndpointConfig(URL, key, "m1"), sleep=sleeps.append, transport=httpx.MockTransport(handler))
    return c, sleeps


def _req(text="hi"):
    return ChatRequest(messages=(("user", text),))


def _reply(text):
    return httpx.Response(200, json={"text": text, "finish_reason": "stop", "usage": {"tokens": 3}})


def test_echo_and_wire_format():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers.get("authorization")
        return _reply(seen["body"]["messages"][-1]["content"])
    c, sleeps = _client(handler)
    r = c.complete(_req("echo me"))
    assert r.text == "echo me" and r.finish_reason == "stop" and r.usage == {"tokens": 3}
    assert seen["body"] == {"model": "m1", "messages": [{"role": "user", "content": "echo me"}],
                            "temperature": 0.2, "max_tokens": 4096}
    assert seen["auth"] == f"Bearer {SECRET}" and sleeps == []


def test_openai_style_body():
    c, _ = _client(lambda r: httpx.Response(200, json={"choices": [{"message": {"content": "ok"},
                                                                    "finish_reason": "stop"}]}))
    assert c.complete(_req()).text == "ok"


def test_retries_server_errors_with_backoff():
    codes = iter([500, 503, 200])

    def handler(request):
        code = next(codes)
        return _reply("done") if code == 200 else httpx.Response(code)
    c, sleeps = _client(handler)
    assert c.complete(_req()).text == "done"
    assert len(sleeps) == 2 and 0.5 <= sleeps[0] <= 0.55 and 1.0 <= sleeps[1] <= 1.1


def test_transport_errors_are_retried_then_exhausted():
    calls = []

    def handler(request):
        calls.append(1)
        raise httpx.ConnectError("boom", request=request)
    c, sleeps = _client(handler)
    with pytest.raises(TransportError, match="4 attempts"):
        c.complete(_req())
    assert len(calls) == 4 and len(sleeps) == 3


@pytest.mark.parametrize("code, exc", [(401, AuthError), (403, AuthError), (400, LLMError), (422, LLMError)])
def test_client_errors_are_not_retried(code, exc):
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(code, text=f"bad key {SECRET}")
    c, sleeps = _client(handler)
    with pytest.raises(exc) as info:
        c.complete(_req())
    assert len(calls) == 1 and sleeps == []
    assert SECRET not in str(info.value)


@pytest.mark.parametrize("resp", [httpx.Response(200, text="not json"), httpx.Response(200, json=[1]),
                                  httpx.Response(200, json={"choices": []})])
def test_malformed_responses(resp):
    c, _ = _client(lambda r: resp)
    with pytest.raises(ResponseError):
        c.complete(_req())


def test_key_never_leaks(caplog):
    cfg = EndpointConfig(URL, SECRET)
    assert SECRET not in repr(cfg)
    c, _ = _client(lambda r: httpx.Response(500))
    with caplog.at_level(logging.DEBUG):
        with pytest.raises(TransportError) as info:
            c.complete(_req())
    assert SECRET not in str(info.value) and SECRET not in caplog.text


def test_from_env():
    cfg = EndpointConfig.from_env({"RECTUNE_LLM_URL": URL, "RECTUNE_LLM_API_KEY": SECRET,
                                   "RECTUNE_LLM_TIMEOUT": "5"})
    assert cfg.url == URL and cfg.api_key == SECRET and cfg.timeout == 5.0 and cfg.model == "default"
    with pytest.raises(LLMError):
        EndpointConfig.from_env({})


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(messages=())
    with pytest.raises(ValueError):
        ChatRequest(messages=(("assistant", "x"),))
    with pytest.raises(ValueError):
        ChatRequest(messages=(("robot", "x"),))
    with pytest.raises(ValueError):
        ChatRequest(messages=(("user", "x"),), temperature=-1)


# ---------------------------------------------------------------- parsing


def test_extract_array_from_fenced_prose():
    text = 'Sure! Here you go:\n```json\n[{"config": {"pre.K1": 40}, "explanation": "a"}]\n```\nBye [1]'
    assert extract_json_array(text).candidates == [{"config": {"pre.K1": 40}, "explanation": "a"}]


def test_extract_array_skips_bad_elements():
    text = '[{"config": {"a": 1}, "explanation": "ok"}, {"config": {"a": "x"}, "explanation": "b"}, 3,' \
           ' {"config": {"a": 2}}, {"config": {"a": true}, "explanation": "c"}]'
    out = extract_json_array(text)
    assert len(out.candidates) == 1
    assert [i for i, _ in out.skipped] == [1, 2, 3, 4]


def test_extract_array_failures():
    with pytest.raises(ValueError, match="no JSON array"):
        extract_json_array("nothing here")
    with pytest.raises(ValueError, match="element 0"):
        extract_json_array('[{"config": 5, "explanation": "x"}]')
    with pytest.raises(ValueError):
        extract_json_array('[{"config": {"a": 1}, "explanation": "x"')  # truncated


def test_extract_object():
    assert extract_json_object('prefix {"reject": []} suffix') == {"reject": []}
    with pytest.raises(ValueError):
        extract_json_object("[1, 2]")


# ---------------------------------------------------------------- actor integration


class _Scripted:
    def __init__(self, text=None, exc=None):
        self.text, self.exc, self.prompts = text, exc, []

    def complete(self, request):
        self.prompts.append(request.messages[-1][1])
        if self.exc:
            raise self.exc
        from rectune.llmclient import ChatResponse
        return ChatResponse(self.text)


def test_llm_proposals_are_padded_heuristically(small_skill):
    cfg = dict(small_skill.initial_config.params, **{"pre.w_heart": 2.0})
    client = _Scripted(json.dumps([{"config": cfg, "explanation": "more hearts"}]))
    out = actor_propose(small_skill, [], 3, backend="llm", seed=1, client=client)
    assert [p.origin for p in out] == ["llm", "heuristic", "heuristic"]
    assert out[0].params == cfg and "exactly 3" in client.prompts[0]


def test_llm_garbage_raises_proposal_error(small_skill):
    with pytest.raises(ProposalError):
        llm_propose(small_skill, [], 2, _Scripted("I cannot help"), 0)
    with pytest.raises(ProposalError):
        llm_propose(small_skill, [], 2, _Scripted(exc=TransportError("down")), 0)


def test_round_degrades_to_heuristic_when_model_fails(small_scenario, small_skill, store, tmp_path, caplog):
    from rectune.abtest import SimulatedPlatform
    p = SimulatedPlatform(small_scenario, small_skill.search_space)
    ctx = LoopContext(small_scenario, tmp_path / "skills", store, small_skill, p,
                      llm_client=_Scripted(exc=TransportError("down")))
    with caplog.at_level(logging.WARNING):
        s = run_round(ctx, LoopSettings(batch=2, proposer="llm", auto_approve=True, num_requests=60), 1)
    assert s.arm_count == 2 and "falling back" in caplog.text
    assert {r.origin for r in store.tasks()} == {"heuristic"}
