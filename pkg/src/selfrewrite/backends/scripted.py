"""Rule-driven backends for tests and desk-scale experiments."""

from __future__ import annotations

import random
import re
from typing import Callable

from ..errors import BackendUnavailable
from ..prompts import THINK_CLOSE
from ..tasks import TaskInstance
from .base import (
    GenerationMode,
    GenerationResult,
    SamplingParams,
    check_reasoning,
    derive_seed,
    split_on_marker,
)
from .toy import ToyPolicy

_SCRIPT_TOKEN_RE = re.compile(r"\\boxed\{|</think>|\w+|[^\w\s]")
_NUMERAL_RE = re.compile(r"[+-]?\d+")

GenerateFn = Callable[[TaskInstance, random.Random], str]
FailureFn = Callable[[GenerationMode, str], bool]


def script_tokens(text: str) -> list[re.Match]:
    return list(_SCRIPT_TOKEN_RE.finditer(text))


def truncate_tokens(text: str, max_tokens: int) -> str:
    toks = script_tokens(text)
    if len(toks) <= max_tokens:
        return text
    return text[: toks[max_tokens - 1].end()] if max_tokens > 0 else ""


def dedupe_consecutive(text: str) -> str:
    """Drop whitespace-separated tokens that repeat the token before them."""
    out: list[str] = []
    for tok in text.split():
        if not out or out[-1] != tok:
            out.append(tok)
    return " ".join(out)


def box_last_numeral(task: TaskInstance, reasoning: str) -> str:
    nums = _NUMERAL_RE.findall(reasoning)
    return f"\\boxed{{{nums[-1]}}}" if nums else "no answer"


def always_correct(task: TaskInstance, rng: random.Random) -> str:
    return f"let me see {task.gold_answer} so {task.gold_answer} {THINK_CLOSE} \\boxed{{{task.gold_answer}}}"


def always_incorrect(task: TaskInstance, rng: random.Random) -> str:
    wrong = str(int(task.gold_answer) + 1) if task.gold_answer.lstrip("-").isdigit() else task.gold_answer + "x"
    return f"hmm {wrong} {THINK_CLOSE} \\boxed{{{wrong}}}"


def never_boxed(task: TaskInstance, rng: random.Random) -> str:
    return f"thinking and thinking {THINK_CLOSE} I am not sure"


def correct_with_probability(p: float) -> GenerateFn:
    def fn(task: TaskInstance, rng: random.Random) -> str:
        return always_correct(task, rng) if rng.random() < p else always_incorrect(task, rng)

    return fn


def _count(text: str) -> int:
    return len(script_tokens(text))


def _result(reasoning: str, answer: str, marker: bool = False) -> GenerationResult:
    n = _count(reasoning) + int(marker) + _count(answer)
    return GenerationResult(reasoning, answer, [-1] * n, [0.0] * n, None, _count(reasoning))


class ScriptedBackend:
    """Deterministic text rules standing in for a model.

    ``generate_fn`` returns full transcripts containing the think-close
    marker; ``rewrite_rule`` maps a passage to its rewrite; ``continue_fn``
    writes an answer for (task, rewritten reasoning).  ``fail`` lets tests
    inject request failures.
    """

    def __init__(
        self,
        generate_fn: GenerateFn = always_correct,
        rewrite_rule: Callable[[str], str] = dedupe_consecutive,
        continue_fn: Callable[[TaskInstance, str], str] = box_last_numeral,
        fail: FailureFn | None = None,
    ):
        self.generate_fn = generate_fn
        self.rewrite_rule = rewrite_rule
        self.continue_fn = continue_fn
        self.fail = fail
        self.calls: list[tuple[GenerationMode, str]] = []

    def _maybe_fail(self, mode: GenerationMode, key: str) -> None:
        self.calls.append((mode, key))
        if self.fail is not None and self.fail(mode, key):
            raise BackendUnavailable(f"injected failure for {mode.name} {key!r}")

    def generate(self, task: TaskInstance, params: SamplingParams, n: int = 1) -> list[GenerationResult]:
        out = []
        for i in range(n):
            self._maybe_fail(GenerationMode.GENERATE, task.task_id)
            rng = random.Random(derive_seed(params.seed, i))
            text = truncate_tokens(self.generate_fn(task, rng), params.max_new_tokens)
            reasoning, answer = split_on_marker(text, THINK_CLOSE)
            out.append(_result(reasoning.strip(), answer.strip(), THINK_CLOSE in text))
        return out

    def rewrite(self, reasoning: str, params: SamplingParams) -> GenerationResult:
        check_reasoning(reasoning)
        self._maybe_fail(GenerationMode.REWRITE, reasoning)
        text = truncate_tokens(self.rewrite_rule(reasoning), params.max_new_tokens)
        return _result(text, "")

    def continue_answer(
        self, task: TaskInstance, rewritten_reasoning: str, params: SamplingParams
    ) -> GenerationResult:
        check_reasoning(rewritten_reasoning, "rewritten_reasoning")
        self._maybe_fail(GenerationMode.CONTINUE, task.task_id)
        answer = truncate_tokens(self.continue_fn(task, rewritten_reasoning), params.max_new_tokens)
        answer = answer.replace(THINK_CLOSE, "")
        return _result("", answer)


class ToyWithRewriter:
    """Toy policy for generation/continuation, another backend for rewriting.

    Rewrites are re-scored under the toy policy so that their tokens carry
    exact log-probabilities and a rewrite-mode context.
    """

    def __init__(self, policy: ToyPolicy, rewriter):
        self.policy = policy
        self.rewriter = rewriter

    def generate(self, task: TaskInstance, params: SamplingParams, n: int = 1) -> list[GenerationResult]:
        return self.policy.generate(task, params, n)

    def rewrite(self, reasoning: str, params: SamplingParams) -> GenerationResult:
        return self.policy.score_rewrite(reasoning, self.rewriter.rewrite(reasoning, params))

    def continue_answer(
        self, task: TaskInstance, rewritten_reasoning: str, params: SamplingParams
    ) -> GenerationResult:
        return self.policy.continue_answer(task, rewritten_reasoning, params)
