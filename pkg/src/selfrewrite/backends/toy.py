"""Linear-softmax token policy with exact log-probabilities and gradients.

The logits for the next token are a sum of rows of a weight matrix: one row
per previous token (one-hot of each of the last ``k`` tokens, per lag) plus
one row for the generation mode.  With ``V`` symbols and three modes the
matrix has ``k*V + 3`` rows and ``V`` columns.  Lags that fall before the
start of the context contribute nothing.
"""

from __future__ import annotations

import io
import json
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from ..errors import ContextOverflow, DimensionMismatch, UnsupportedBackend
from ..tasks import TaskInstance
from .base import (
    UNLIMITED,
    ContextDescriptor,
    GenerationMode,
    GenerationResult,
    SamplingParams,
    check_reasoning,
    derive_seed,
)

N_MODES = len(GenerationMode)
MAX_VOCABULARY = 64

DIGITS = tuple("0123456789")
SYMBOLS = ("+", "-", "*", "=", "(", ")")
BOX_OPEN, BOX_CLOSE, THINK_CLOSE, EOS = "\\boxed{", "}", "</think>", "<eos>"
WORDS = ("so", "wait", "ok", "check", "hmm", "thus", "mod", "is", "then", "yes", "let", "again")
VOCAB: tuple[str, ...] = DIGITS + SYMBOLS + (BOX_OPEN, BOX_CLOSE, THINK_CLOSE, EOS) + WORDS
TOKEN_ID = {s: i for i, s in enumerate(VOCAB)}
BOX_OPEN_ID = TOKEN_ID[BOX_OPEN]
BOX_CLOSE_ID = TOKEN_ID[BOX_CLOSE]
THINK_CLOSE_ID = TOKEN_ID[THINK_CLOSE]
EOS_ID = TOKEN_ID[EOS]
DIGIT_IDS = tuple(TOKEN_ID[d] for d in DIGITS)
WORD_IDS = tuple(TOKEN_ID[w] for w in WORDS)

_TOKEN_RE = re.compile(r"\\boxed\{|</think>|<eos>|\d|[+\-*=()}]|[A-Za-z]+")


def encode(text: str) -> list[int]:
    """Map text onto toy symbols; anything outside the vocabulary is dropped."""
    ids = []
    for piece in _TOKEN_RE.findall(text):
        tok = TOKEN_ID.get(piece if piece[0] == "\\" or piece[0] == "<" else piece.lower())
        if tok is not None:
            ids.append(tok)
    return ids


def decode(ids: Sequence[int]) -> str:
    """Space-separated symbols, except box contents which are written tight."""
    out: list[str] = []
    in_box = False
    for tok in ids:
        s = VOCAB[tok]
        if in_box:
            out[-1] += s
            if tok == BOX_CLOSE_ID:
                in_box = False
            continue
        out.append(s)
        in_box = tok == BOX_OPEN_ID
    return " ".join(out)


@dataclass
class PolicyParameters:
    theta: np.ndarray
    vocabulary_size: int = len(VOCAB)
    context_order: int = 2

    def __post_init__(self):
        if not 1 <= self.vocabulary_size <= MAX_VOCABULARY:
            raise ValueError(f"vocabulary_size must be in [1, {MAX_VOCABULARY}]")
        if self.context_order < 1:
            raise ValueError("context_order must be positive")
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64).ravel()
        if self.theta.size != self.size:
            raise DimensionMismatch(f"theta has {self.theta.size} entries, expected {self.size}")

    @property
    def n_rows(self) -> int:
        return self.context_order * self.vocabulary_size + N_MODES

    @property
    def size(self) -> int:
        return self.n_rows * self.vocabulary_size

    @property
    def matrix(self) -> np.ndarray:
        return self.theta.reshape(self.n_rows, self.vocabulary_size)

    @classmethod
    def zeros(cls, vocabulary_size: int = len(VOCAB), context_order: int = 2) -> "PolicyParameters":
        n = (context_order * vocabulary_size + N_MODES) * vocabulary_size
        return cls(np.zeros(n), vocabulary_size, context_order)

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(self.theta.copy(), self.vocabulary_size, self.context_order)

    def with_theta(self, theta: np.ndarray) -> "PolicyParameters":
        return PolicyParameters(theta, self.vocabulary_size, self.context_order)

    def to_bytes(self) -> bytes:
        header = json.dumps(
            {"vocabulary_size": self.vocabulary_size, "context_order": self.context_order}
        ).encode()
        buf = io.BytesIO()
        buf.write(len(header).to_bytes(4, "little"))
        buf.write(header)
        buf.write(self.theta.astype("<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "PolicyParameters":
        n = int.from_bytes(data[:4], "little")
        header = json.loads(data[4 : 4 + n])
        theta = np.frombuffer(data[4 + n :], dtype="<f8").astype(np.float64)
        return cls(theta, header["vocabulary_size"], header["context_order"])


def window_features(
    prefix: Sequence[int], token_ids: Sequence[int], mode: int, context_order: int, vocabulary_size: int
) -> np.ndarray:
    """Active weight-matrix rows for every generated token, shape ``(n, k+1)``.

    Missing lags point at row ``k*V + N_MODES`` (the zero padding row).
    """
    k, V = context_order, vocabulary_size
    pad = k * V + N_MODES
    seq = list(prefix[-k:]) if k else []
    offset = len(seq)
    seq.extend(token_ids)
    n = len(token_ids)
    feats = np.full((n, k + 1), pad, dtype=np.int64)
    for t in range(n):
        pos = offset + t
        for lag in range(1, k + 1):
            if pos - lag >= 0:
                feats[t, lag - 1] = (lag - 1) * V + seq[pos - lag]
    feats[:, k] = k * V + int(mode)
    return feats


def _padded(matrix: np.ndarray) -> np.ndarray:
    return np.vstack([matrix, np.zeros((1, matrix.shape[1]))])


def feature_logits(matrix: np.ndarray, feats: np.ndarray) -> np.ndarray:
    return _padded(matrix)[feats].sum(axis=1)


def token_logprobs(matrix: np.ndarray, feats: np.ndarray, token_ids: Sequence[int]) -> np.ndarray:
    logits = feature_logits(matrix, feats)
    ids = np.asarray(token_ids, dtype=np.int64)
    return logits[np.arange(len(ids)), ids] - logsumexp(logits, axis=1)


def weighted_logprob_grad(
    matrix: np.ndarray, feats: np.ndarray, token_ids: Sequence[int], weights: np.ndarray
) -> np.ndarray:
    """Gradient of ``sum_t weights[t] * logprob_t`` with respect to the weight matrix."""
    logits = feature_logits(matrix, feats)
    probs = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    delta = -probs
    delta[np.arange(len(token_ids)), np.asarray(token_ids, dtype=np.int64)] += 1.0
    delta *= np.asarray(weights, dtype=np.float64)[:, None]
    grad = np.zeros((matrix.shape[0] + 1, matrix.shape[1]))
    # each row of delta lands on every active feature row of that token
    for col in range(feats.shape[1]):
        np.add.at(grad, feats[:, col], delta)
    return grad[:-1]


def result_features(params: PolicyParameters, result: GenerationResult) -> np.ndarray:
    if result.context is None:
        raise UnsupportedBackend("result carries no context descriptor; cannot recompute log-probabilities")
    return window_features(
        result.context.prefix, result.token_ids, result.context.mode,
        params.context_order, params.vocabulary_size,
    )


def logprob_gradient(params: PolicyParameters, result: GenerationResult) -> tuple[float, np.ndarray]:
    """Total log-probability of ``result`` under ``params`` and its exact gradient."""
    feats = result_features(params, result)
    lp = token_logprobs(params.matrix, feats, result.token_ids)
    grad = weighted_logprob_grad(params.matrix, feats, result.token_ids, np.ones(len(lp)))
    return float(lp.sum()), grad.ravel()


def _sampling_distribution(logits: np.ndarray, params: SamplingParams) -> np.ndarray:
    z = logits / params.temperature
    probs = np.exp(z - logsumexp(z))
    if params.top_k != UNLIMITED and params.top_k < probs.size:
        cutoff = np.sort(probs)[-params.top_k]
        probs = np.where(probs >= cutoff, probs, 0.0)
    if params.top_p < 1.0:
        order = np.argsort(-probs, kind="stable")
        cum = np.cumsum(probs[order]) / probs.sum()
        keep = order[: int(np.searchsorted(cum, params.top_p)) + 1]
        mask = np.zeros_like(probs, dtype=bool)
        mask[keep] = True
        probs = np.where(mask, probs, 0.0)
    return probs / probs.sum()


class ToyPolicy:
    """Trainable backend over the 32-symbol toy vocabulary.

    Reported token log-probabilities are those of the untempered policy
    (the quantity the importance ratio needs), whatever sampling settings
    were used to draw the token.
    """

    def __init__(self, params: PolicyParameters, max_context_tokens: int | None = None):
        if params.vocabulary_size != len(VOCAB):
            raise ValueError(f"toy policy needs vocabulary_size={len(VOCAB)}")
        self.params = params
        self.max_context_tokens = max_context_tokens

    @property
    def k(self) -> int:
        return self.params.context_order

    def prompt_tokens(self, task: TaskInstance) -> list[int]:
        return encode(task.prompt_text)

    def _check_context(self, n_tokens: int) -> None:
        if self.max_context_tokens is not None and n_tokens > self.max_context_tokens:
            raise ContextOverflow(f"context of {n_tokens} tokens exceeds {self.max_context_tokens}")

    def _sample(
        self, mode: GenerationMode, context: Sequence[int], params: SamplingParams, seed: int
    ) -> tuple[ContextDescriptor, list[int], list[float], int | None]:
        """Sample until a stop symbol; returns tokens, logprobs and the marker position."""
        rng = np.random.default_rng(seed)
        matrix = self.params.matrix
        V, k = self.params.vocabulary_size, self.k
        prefix = tuple(context[-k:])
        window = list(prefix)
        tokens: list[int] = []
        logprobs: list[float] = []
        marker_at = None
        for _ in range(params.max_new_tokens):
            rows = [(lag - 1) * V + window[-lag] for lag in range(1, min(k, len(window)) + 1)]
            logits = matrix[rows].sum(axis=0) + matrix[k * V + int(mode)]
            probs = _sampling_distribution(logits, params)
            tok = int(rng.choice(V, p=probs))
            tokens.append(tok)
            logprobs.append(float(logits[tok] - logsumexp(logits)))
            window = (window + [tok])[-k:]
            if mode == GenerationMode.GENERATE and marker_at is None:
                if tok == THINK_CLOSE_ID:
                    marker_at = len(tokens) - 1
                elif tok == EOS_ID:
                    break
            elif tok in (EOS_ID, THINK_CLOSE_ID):
                break
        return ContextDescriptor(mode, prefix), tokens, logprobs, marker_at

    @staticmethod
    def _strip_stop(ids: list[int]) -> list[int]:
        return ids[:-1] if ids and ids[-1] in (EOS_ID, THINK_CLOSE_ID) else ids

    def generate(self, task: TaskInstance, params: SamplingParams, n: int = 1) -> list[GenerationResult]:
        if n < 1:
            raise ValueError("n must be positive")
        context = self.prompt_tokens(task)
        self._check_context(len(context))
        results = []
        for i in range(n):
            desc, tokens, lps, marker_at = self._sample(
                GenerationMode.GENERATE, context, params, derive_seed(params.seed, i)
            )
            if marker_at is None:
                reasoning, answer = self._strip_stop(tokens), []
            else:
                reasoning, answer = tokens[:marker_at], self._strip_stop(tokens[marker_at + 1 :])
            results.append(GenerationResult(decode(reasoning), decode(answer), tokens, lps, desc, len(reasoning)))
        return results

    def rewrite(self, reasoning: str, params: SamplingParams) -> GenerationResult:
        check_reasoning(reasoning)
        context = encode(reasoning)
        self._check_context(len(context))
        desc, tokens, lps, _ = self._sample(GenerationMode.REWRITE, context, params, derive_seed(params.seed, 0))
        body = self._strip_stop(tokens)
        return GenerationResult(decode(body), "", tokens, lps, desc, len(body))

    def continuation_context(self, task: TaskInstance, rewritten_reasoning: str) -> list[int]:
        return self.prompt_tokens(task) + encode(rewritten_reasoning) + [THINK_CLOSE_ID]

    def continue_answer(
        self, task: TaskInstance, rewritten_reasoning: str, params: SamplingParams
    ) -> GenerationResult:
        check_reasoning(rewritten_reasoning, "rewritten_reasoning")
        context = self.continuation_context(task, rewritten_reasoning)
        self._check_context(len(context))
        desc, tokens, lps, _ = self._sample(GenerationMode.CONTINUE, context, params, derive_seed(params.seed, 0))
        return GenerationResult("", decode(self._strip_stop(tokens)), tokens, lps, desc, 0)

    def score(self, mode: GenerationMode, context: Sequence[int], token_ids: Sequence[int]) -> GenerationResult:
        """Teacher-forced result for externally produced tokens under the current parameters."""
        desc = ContextDescriptor(mode, tuple(context[-self.k :]))
        feats = window_features(desc.prefix, token_ids, mode, self.k, self.params.vocabulary_size)
        lps = token_logprobs(self.params.matrix, feats, token_ids)
        return GenerationResult("", "", list(token_ids), lps.tolist(), desc)

    def score_rewrite(self, source_reasoning: str, rewritten: GenerationResult) -> GenerationResult:
        """Attach toy tokens/log-probs to a rewrite produced by another backend."""
        body = encode(rewritten.reasoning_text)
        scored = self.score(GenerationMode.REWRITE, encode(source_reasoning), body + [THINK_CLOSE_ID])
        scored.reasoning_text = rewritten.reasoning_text
        scored.reasoning_token_count = len(body)
        return scored
