"""Warm-start parameters for the toy policy.

A freshly zeroed toy policy answers at chance, so no group is ever fully
correct and rewriting never triggers.  Self-rewriting is a post-training
method, so experiments start from a policy that already reasons (verbosely)
and answers.  Here that policy is obtained by maximum likelihood on
synthetic transcripts: runs of the answer digit interleaved with filler
words, then ``</think> \\boxed{d} <eos>``.
"""

from __future__ import annotations

import random
from typing import Sequence

import numpy as np

from .backends.base import GenerationMode
from .backends.toy import (
    BOX_CLOSE_ID,
    BOX_OPEN_ID,
    DIGIT_IDS,
    EOS_ID,
    THINK_CLOSE_ID,
    TOKEN_ID,
    PolicyParameters,
    encode,
    token_logprobs,
    weighted_logprob_grad,
    window_features,
)
from .grpo import HyperParams, OptimizerState, optimizer_step
from .tasks import TaskInstance

FILLERS = ("wait", "hmm", "ok", "check", "so")


def verbose_reasoning(answer_digit: int, rng: random.Random, repeat: float = 0.6, stop: float = 0.25,
                      fillers: Sequence[str] = FILLERS) -> list[int]:
    """Digit runs separated by one or two copies of a filler word.

    At most two non-digit tokens ever separate occurrences of the digit, so
    a policy with context order 3 can carry it to the answer.
    """
    out: list[int] = []
    while True:
        out.append(answer_digit)
        while rng.random() < repeat:
            out.append(answer_digit)
        if rng.random() < stop:
            return out
        word = TOKEN_ID[rng.choice(fillers)]
        out.extend([word] * rng.choice((1, 2)))


def answer_tokens(answer_digit: int) -> list[int]:
    return [BOX_OPEN_ID, answer_digit, BOX_CLOSE_ID, EOS_ID]


def demonstrations(
    tasks: Sequence[TaskInstance], per_task: int, seed: int = 0, **kwargs
) -> list[tuple[GenerationMode, list[int], list[int]]]:
    """(mode, context, tokens) triples for generate and continue modes."""
    rng = random.Random(seed)
    demos = []
    for task in tasks:
        if len(task.gold_answer) != 1 or not task.gold_answer.isdigit():
            raise ValueError("warm-start transcripts need single-digit gold answers")
        d = TOKEN_ID[task.gold_answer]
        prompt = encode(task.prompt_text)
        for _ in range(per_task):
            reasoning = verbose_reasoning(d, rng, **kwargs)
            demos.append((GenerationMode.GENERATE, prompt, reasoning + [THINK_CLOSE_ID] + answer_tokens(d)))
            demos.append((GenerationMode.CONTINUE, prompt + reasoning + [THINK_CLOSE_ID], answer_tokens(d)))
    return demos


def fit_policy(
    demos: Sequence[tuple[GenerationMode, list[int], list[int]]],
    context_order: int = 3,
    steps: int = 300,
    learning_rate: float = 0.1,
    params: PolicyParameters | None = None,
) -> PolicyParameters:
    """Maximum-likelihood fit (AdamW ascent on mean token log-likelihood)."""
    params = params.copy() if params is not None else PolicyParameters.zeros(context_order=context_order)
    k, V = params.context_order, params.vocabulary_size
    feats = np.concatenate([window_features(ctx, toks, mode, k, V) for mode, ctx, toks in demos])
    ids = np.concatenate([np.asarray(toks) for _, _, toks in demos])
    weights = np.full(len(ids), 1.0 / len(ids))
    hp = HyperParams(learning_rate=learning_rate, weight_decay=0.0, grad_norm_clip=1e9)
    state = OptimizerState.zeros(params.size, hp)
    theta = params.theta
    for _ in range(steps):
        grad = weighted_logprob_grad(theta.reshape(-1, V), feats, ids, weights).ravel()
        state, theta = optimizer_step(state, theta, grad, hp)
    return params.with_theta(theta)


def mean_loglik(params: PolicyParameters, demos) -> float:
    k, V = params.context_order, params.vocabulary_size
    total, n = 0.0, 0
    for mode, ctx, toks in demos:
        lp = token_logprobs(params.matrix, window_features(ctx, toks, mode, k, V), toks)
        total += lp.sum()
        n += len(toks)
    return total / n


def verbose_reasoner(tasks: Sequence[TaskInstance], per_task: int = 4, seed: int = 0,
                     steps: int = 300, context_order: int = 3, **kwargs) -> PolicyParameters:
    """Toy parameters imitating a verbose but accurate reasoner on ``tasks``."""
    return fit_policy(demonstrations(tasks, per_task, seed, **kwargs), context_order, steps=steps)


__all__ = ["DIGIT_IDS", "demonstrations", "fit_policy", "mean_loglik", "verbose_reasoner", "verbose_reasoning"]
