"""Provider-agnostic chat-completion client.

Wire format (POST to the endpoint URL)::

    request:  {"model": str, "messages": [{"role": str, "content": str}],
               "temperature": float, "max_tokens": int}
    response: {"text": str, "finish_reason": str, "usage": {...}}

OpenAI-style responses (``choices[0].message.content``) are accepted too.
Configuration comes from RECTUNE_LLM_URL, RECTUNE_LLM_API_KEY,
RECTUNE_LLM_MODEL and RECTUNE_LLM_TIMEOUT.
"""

from __future__ import annotations

import json
import logging
import os
import random
import re
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import httpx

from .errors import RecTuneError

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
BACKOFF = (0.5, 1.0, 2.0)


class LLMError(RecTuneError):
    pass


class TransportError(LLMError):
    pass


class AuthError(LLMError):
    pass


class ResponseError(LLMError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[tuple[str, str], ...]
    model: str = ""
    temperature: float = 0.2
    max_tokens: int = 4096

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        for role, _ in self.messages:
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r}")
        if self.messages[0][0] not in ("system", "user"):
            raise ValueError("the first message must come from system or user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def body(self, default_model: str) -> dict:
        return {
            "model": self.model or default_model,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class ChatResponse:
    text: str
    finish_reason: str = ""
    usage: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    api_key: str = field(default="", repr=False)
    model: str = "default"
    timeout: float = 30.0

    @classmethod
    def from_env(cls, env=None) -> "EndpointConfig":
        env = os.environ if env is None else env
        url = env.get("RECTUNE_LLM_URL", "")
        if not url:
            raise LLMError("RECTUNE_LLM_URL is not set")
        return cls(url, env.get("RECTUNE_LLM_API_KEY", ""), env.get("RECTUNE_LLM_MODEL", "default"),
                   float(env.get("RECTUNE_LLM_TIMEOUT", "30")))


def _parse_response(data: Any) -> ChatResponse:
    if not isinstance(data, dict):
        raise ResponseError("response body is not a JSON object")
    if isinstance(data.get("text"), str):
        return ChatResponse(data["text"], str(data.get("finish_reason", "")), dict(data.get("usage") or {}))
    try:
        choice = data["choices"][0]
        return ChatResponse(choice["message"]["content"], str(choice.get("finish_reason", "")),
                            dict(data.get("usage") or {}))
    except (KeyError, IndexError, TypeError):
        raise ResponseError("response body has no text") from None


class ChatClient:
    """Blocking client; one instance may be shared between threads."""

    def __init__(self, endpoint: EndpointConfig, sleep: Callable[[float], None] = time.sleep,
                 transport: httpx.BaseTransport | None = None, jitter: float = 0.1):
        self.endpoint = endpoint
        self._sleep = sleep
        self._transport = transport
        self._jitter = jitter

    def _headers(self):
        h = {"Content-Type": "application/json"}
        if self.endpoint.api_key:
            h["Authorization"] = f"Bearer {self.endpoint.api_key}"
        return h

    def complete(self, request: ChatRequest) -> ChatResponse:
        body = request.body(self.endpoint.model)
        last = None
        for attempt in range(len(BACKOFF) + 1):
            if attempt:
                delay = BACKOFF[attempt - 1]
                self._sleep(delay + random.uniform(0, self._jitter * delay))
            try:
                with httpx.Client(timeout=self.endpoint.timeout, transport=self._transport) as client:
                    resp = client.post(self.endpoint.url, json=body, headers=self._headers())
            except httpx.HTTPError as exc:
                last = f"transport error: {type(exc).__name__}"
                log.info("chat attempt %d failed: %s", attempt + 1, last)
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"endpoint refused credentials (HTTP {resp.status_code})")
            if 400 <= resp.status_code < 500:
                raise LLMError(f"request rejected (HTTP {resp.status_code})")
            if resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                log.info("chat attempt %d failed: %s", attempt + 1, last)
                continue
            try:
                data = resp.json()
            except ValueError:
                raise ResponseError("response body is not JSON") from None
            return _parse_response(data)
        raise TransportError(f"giving up after {len(BACKOFF) + 1} attempts ({last})")


@dataclass(frozen=True)
class ParsedProposals:
    candidates: list[dict]
    skipped: list[tuple[int, str]]


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.S)


def _json_values(text: str, opener: str):
    decoder = json.JSONDecoder()
    chunks = [m.group(1) for m in _FENCE.finditer(text)] + [text]
    for chunk in chunks:
        for i, ch in enumerate(chunk):
            if ch != opener:
                continue
            try:
                value, _ = decoder.raw_decode(chunk, i)
            except ValueError:
                continue
            yield value


def extract_json_array(text: str) -> ParsedProposals:
    """First well-formed JSON array in ``text`` whose elements are proposals.

    Elements that break the schema are skipped and reported; an array with no
    valid element raises ValueError naming the first bad index.
    """
    for value in _json_values(text, "["):
        if not isinstance(value, list):
            continue
        good, skipped = [], []
        for i, el in enumerate(value):
            problem = _element_problem(el)
            if problem:
                skipped.append((i, problem))
            else:
                good.append({"config": dict(el["config"]), "explanation": el["explanation"]})
        if good:
            return ParsedProposals(good, skipped)
        if value:
            raise ValueError(f"element {skipped[0][0]}: {skipped[0][1]}")
    raise ValueError("no JSON array found in model output")


def _element_problem(el) -> str | None:
    if not isinstance(el, dict):
        return "not an object"
    cfg = el.get("config")
    if not isinstance(cfg, dict):
        return "missing 'config' object"
    for k, v in cfg.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return f"config value for {k!r} is not a number"
    if not isinstance(el.get("explanation"), str) or not el["explanation"].strip():
        return "missing 'explanation' string"
    return None


def extract_json_object(text: str) -> dict:
    for value in _json_values(text, "{"):
        if isinstance(value, dict):
            return value
    raise ValueError("no JSON object found in model output")
