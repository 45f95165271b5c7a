"""Chat-completions style client for external inference and judge servers."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import httpx

from ..errors import BackendError, BackendUnavailable, ConfigInvalid, ContextOverflow, UnsupportedBackend
from ..prompts import THINK_CLOSE, rewrite_prompt
from ..tasks import TaskInstance
from .base import GenerationResult, SamplingParams, check_reasoning, derive_seed, split_on_marker

log = logging.getLogger(__name__)

_OVERFLOW_HINTS = ("context length", "maximum context", "too many tokens", "context_length_exceeded")
THINK_OPEN = "<think>"


@dataclass
class ChatReply:
    content: str
    reasoning: str | None = None
    logprobs: list[float] | None = None
    token_texts: list[str] | None = None
    usage: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


@dataclass
class ChatEndpoint:
    """One OpenAI-compatible ``/chat/completions`` URL.

    The bearer token is read from the environment variable named by
    ``api_key_env`` at request time.
    """

    url: str
    model: str
    api_key_env: str | None = None
    timeout: float = 60.0
    max_retries: int = 2
    backoff: float = 0.5
    transport: httpx.BaseTransport | None = None

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            token = os.environ.get(self.api_key_env)
            if token is None:
                raise ConfigInvalid(f"environment variable {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def body(self, messages: list[dict], params: SamplingParams, extra: dict | None = None) -> dict:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": messages,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_new_tokens,
            "seed": params.seed,
        }
        if extra:
            body.update(extra)
        return body

    def complete(self, messages: list[dict], params: SamplingParams, extra: dict | None = None) -> ChatReply:
        body = self.body(messages, params, extra)
        headers = self._headers()
        last_err: Exception | None = None
        with httpx.Client(timeout=self.timeout, transport=self.transport) as client:
            for attempt in range(self.max_retries + 1):
                try:
                    resp = client.post(self.url, json=body, headers=headers)
                except httpx.HTTPError as err:
                    last_err = err
                else:
                    if resp.status_code == 200:
                        return parse_reply(resp.json())
                    text = resp.text
                    if resp.status_code == 400 and any(h in text.lower() for h in _OVERFLOW_HINTS):
                        raise ContextOverflow(text[:500])
                    if resp.status_code < 500 and resp.status_code != 429:
                        raise BackendError(f"HTTP {resp.status_code}: {text[:500]}")
                    last_err = BackendError(f"HTTP {resp.status_code}: {text[:500]}")
                if attempt < self.max_retries:
                    log.warning("request to %s failed (%s); retry %d", self.url, last_err, attempt + 1)
                    time.sleep(self.backoff * 2**attempt)
        raise BackendUnavailable(f"{self.url} unreachable after {self.max_retries + 1} attempts: {last_err}")


def parse_reply(payload: dict) -> ChatReply:
    try:
        choice = payload["choices"][0]
        message = choice["message"]
    except (KeyError, IndexError, TypeError) as err:
        raise BackendError(f"malformed completion payload: {err}") from err
    lp_block = (choice.get("logprobs") or {}).get("content")
    logprobs = [float(e["logprob"]) for e in lp_block] if lp_block else None
    texts = [e.get("token", "") for e in lp_block] if lp_block else None
    return ChatReply(
        content=message.get("content") or "",
        reasoning=message.get("reasoning_content") or message.get("reasoning"),
        logprobs=logprobs,
        token_texts=texts,
        usage=payload.get("usage") or {},
        raw=payload,
    )


def _split_reply(reply: ChatReply) -> tuple[str, str]:
    if reply.reasoning is not None:
        return reply.reasoning.strip(), reply.content.replace(THINK_CLOSE, "").strip()
    text = reply.content
    if text.lstrip().startswith(THINK_OPEN):
        text = text.lstrip()[len(THINK_OPEN):]
    reasoning, answer = split_on_marker(text, THINK_CLOSE)
    return reasoning.strip(), answer.strip()


def _reasoning_tokens(reply: ChatReply, reasoning: str) -> int:
    details = reply.usage.get("completion_tokens_details") or {}
    if details.get("reasoning_tokens") is not None:
        return int(details["reasoning_tokens"])
    if reply.token_texts is not None:
        for i, tok in enumerate(reply.token_texts):
            if THINK_CLOSE in tok:
                return i
        return len(reply.token_texts)
    return len(reasoning.split())


def _to_result(reply: ChatReply, reasoning: str, answer: str, n_reasoning: int) -> GenerationResult:
    lps = reply.logprobs or []
    # remote token ids are not exposed by the chat protocol
    return GenerationResult(reasoning, answer, [-1] * len(lps), lps, None, n_reasoning)


class ChatCompletionsBackend:
    """Rollout/analysis-only backend talking to an external inference server.

    Continuation relies on the server accepting a trailing assistant message
    as a prefix (``continue_extra``; vLLM's flags by default).
    """

    def __init__(
        self,
        endpoint: ChatEndpoint,
        max_workers: int = 8,
        continue_extra: dict | None = None,
        logprobs: bool = True,
    ):
        self.endpoint = endpoint
        self.max_workers = max_workers
        self.continue_extra = (
            {"continue_final_message": True, "add_generation_prompt": False}
            if continue_extra is None
            else continue_extra
        )
        self.logprobs = logprobs

    def _extra(self, extra: dict | None = None) -> dict:
        out = {"logprobs": True} if self.logprobs else {}
        out.update(extra or {})
        return out

    def generate(self, task: TaskInstance, params: SamplingParams, n: int = 1) -> list[GenerationResult]:
        messages = [{"role": "user", "content": task.prompt_text}]

        def one(i: int) -> GenerationResult:
            reply = self.endpoint.complete(messages, params.with_seed(derive_seed(params.seed, i)), self._extra())
            reasoning, answer = _split_reply(reply)
            return _to_result(reply, reasoning, answer, _reasoning_tokens(reply, reasoning))

        if n == 1 or self.max_workers <= 1:
            return [one(i) for i in range(n)]
        with ThreadPoolExecutor(max_workers=min(n, self.max_workers)) as pool:
            # map preserves request order regardless of completion order
            return list(pool.map(one, range(n)))

    def rewrite(self, reasoning: str, params: SamplingParams) -> GenerationResult:
        check_reasoning(reasoning)
        messages = [{"role": "user", "content": rewrite_prompt(reasoning)}]
        reply = self.endpoint.complete(messages, params.with_seed(derive_seed(params.seed, 0)), self._extra())
        # a thinking model may emit its own reasoning first; the rewrite is the final content
        text = reply.content
        if reply.reasoning is None and THINK_CLOSE in text:
            text = split_on_marker(text, THINK_CLOSE)[1]
        text = text.strip()
        lps = reply.logprobs or []
        return GenerationResult(text, "", [-1] * len(lps), lps, None, len(text.split()))

    def continue_answer(
        self, task: TaskInstance, rewritten_reasoning: str, params: SamplingParams
    ) -> GenerationResult:
        check_reasoning(rewritten_reasoning, "rewritten_reasoning")
        prefix = f"{THINK_OPEN}\n{rewritten_reasoning}\n{THINK_CLOSE}\n\n"
        messages = [
            {"role": "user", "content": task.prompt_text},
            {"role": "assistant", "content": prefix},
        ]
        reply = self.endpoint.complete(
            messages, params.with_seed(derive_seed(params.seed, 0)), self._extra(self.continue_extra)
        )
        answer = reply.content
        if answer.startswith(prefix):
            answer = answer[len(prefix):]
        answer = answer.replace(THINK_CLOSE, "").strip()
        return _to_result(reply, "", answer, 0)

    def logprob_gradient(self, *args, **kwargs):
        raise UnsupportedBackend("external inference backends expose no gradients")
