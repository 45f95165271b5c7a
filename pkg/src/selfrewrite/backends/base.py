"""Types shared by all generation backends."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from ..tasks import TaskInstance

UNLIMITED = -1


class GenerationMode(IntEnum):
    GENERATE = 0
    REWRITE = 1
    CONTINUE = 2


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 1.0
    top_p: float = 1.0
    top_k: int = UNLIMITED
    max_new_tokens: int = 12288
    seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if self.top_k != UNLIMITED and self.top_k < 1:
            raise ValueError("top_k must be positive or UNLIMITED (-1)")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be positive")

    def with_seed(self, seed: int) -> "SamplingParams":
        return dataclasses.replace(self, seed=seed)


# Inference defaults: training-time sampling vs. rewrite/test.
SAMPLE_PARAMS = SamplingParams(temperature=1.0, top_p=1.0, top_k=UNLIMITED, max_new_tokens=12288)
REWRITE_PARAMS = SamplingParams(temperature=0.6, top_p=0.95, top_k=20, max_new_tokens=32768)
TEST_PARAMS = REWRITE_PARAMS


@dataclass(frozen=True)
class ContextDescriptor:
    """Enough to rebuild every token's conditioning window.

    ``prefix`` holds the tokens preceding the first generated token (already
    truncated to the policy's context order); later windows come from the
    generated tokens themselves.
    """

    mode: GenerationMode
    prefix: tuple[int, ...]


@dataclass
class GenerationResult:
    reasoning_text: str
    answer_text: str
    token_ids: list[int] = field(default_factory=list)
    token_logprobs: list[float] = field(default_factory=list)
    context: ContextDescriptor | None = None
    # number of generated tokens before the think-close marker
    reasoning_token_count: int = 0

    def __post_init__(self):
        if len(self.token_ids) != len(self.token_logprobs):
            raise ValueError("token_ids and token_logprobs differ in length")


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from a tuple of non-negative integers."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@runtime_checkable
class Backend(Protocol):
    """The three conditionals a self-rewriting rollout needs."""

    def generate(self, task: TaskInstance, params: SamplingParams, n: int) -> list[GenerationResult]: ...

    def rewrite(self, reasoning: str, params: SamplingParams) -> GenerationResult: ...

    def continue_answer(
        self, task: TaskInstance, rewritten_reasoning: str, params: SamplingParams
    ) -> GenerationResult: ...


def check_reasoning(text: str, what: str = "reasoning") -> None:
    if not text or not text.strip():
        raise ValueError(f"{what} must be non-empty")


def split_on_marker(text: str, marker: str) -> tuple[str, str]:
    """Split ``text`` at the first ``marker``; no marker means all reasoning."""
    head, sep, tail = text.partition(marker)
    if not sep:
        return text, ""
    return head, tail


def whitespace_tokens(text: str) -> Sequence[str]:
    return text.split()
