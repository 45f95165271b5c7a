"""Clipped surrogate objective, its exact gradient, and AdamW ascent steps.

All values use the maximization sign: a positive objective is good and the
optimizer moves parameters along the gradient.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backends.base import GenerationResult
from .backends.toy import (
    PolicyParameters,
    result_features,
    token_logprobs,
    weighted_logprob_grad,
)
from .errors import DimensionMismatch, EmptyBatch, NonFiniteObjective


@dataclass(frozen=True)
class HyperParams:
    clip_epsilon: float = 0.2
    learning_rate: float = 3e-6
    weight_decay: float = 1e-2
    kl_coefficient: float = 0.0
    grad_norm_clip: float = 1.0
    group_size: int = 8
    batch_size: int = 256
    cutoff_length: int = 12288
    optimizer: str = "adamw"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    rewrite_advantage_scale: float = 5.0

    def __post_init__(self):
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if self.learning_rate <= 0 or self.grad_norm_clip <= 0:
            raise ValueError("learning_rate and grad_norm_clip must be positive")
        if self.weight_decay < 0 or self.kl_coefficient < 0:
            raise ValueError("weight_decay and kl_coefficient must be non-negative")
        if self.group_size < 2 or self.group_size % 2:
            raise ValueError("group_size must be a positive even number")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError("optimizer must be 'adamw' or 'sgd'")

    def replace(self, **changes) -> "HyperParams":
        return dataclasses.replace(self, **changes)


@dataclass
class TrainSample:
    """One response flattened to token level.

    ``feats`` holds the active weight rows of every token (its true
    generation context), so rewritten reasoning and continuation tokens can
    sit in one sample while keeping their own conditioning.
    """

    feats: np.ndarray
    token_ids: np.ndarray
    old_logprobs: np.ndarray
    advantage: float
    mask: np.ndarray
    ref_logprobs: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.token_ids)
        if len(self.mask) != n or len(self.old_logprobs) != n or self.feats.shape[0] != n:
            raise ValueError("token arrays of a sample must have equal length")
        if not np.isfinite(self.advantage):
            raise ValueError("advantage must be finite")

    @classmethod
    def from_results(
        cls,
        params: PolicyParameters,
        segments: Sequence[GenerationResult],
        advantage: float,
        cutoff_length: int | None = None,
    ) -> "TrainSample":
        feats = np.concatenate([result_features(params, seg) for seg in segments])
        ids = np.concatenate([np.asarray(seg.token_ids, dtype=np.int64) for seg in segments])
        old = np.concatenate([np.asarray(seg.token_logprobs, dtype=np.float64) for seg in segments])
        mask = np.ones(len(ids), dtype=bool)
        if cutoff_length is not None:
            mask[cutoff_length:] = False
        return cls(feats, ids, old, float(advantage), mask)


@dataclass
class _Flat:
    feats: np.ndarray
    ids: np.ndarray
    old: np.ndarray
    ref: np.ndarray | None
    sample: np.ndarray
    adv: np.ndarray
    weight: np.ndarray  # 1 / (n_samples * |o_i|) on unmasked tokens, 0 elsewhere


def _flatten(batch: Sequence[TrainSample]) -> _Flat:
    if not batch:
        raise EmptyBatch("batch has no samples")
    counts = np.array([int(s.mask.sum()) for s in batch])
    if (counts == 0).any():
        raise ValueError("every sample needs at least one unmasked token")
    n = len(batch)
    mask = np.concatenate([s.mask for s in batch])
    sample = np.concatenate([np.full(len(s.token_ids), i) for i, s in enumerate(batch)])
    weight = np.where(mask, 1.0 / (n * counts[sample]), 0.0)
    have_ref = all(s.ref_logprobs is not None for s in batch)
    return _Flat(
        feats=np.concatenate([s.feats for s in batch]),
        ids=np.concatenate([s.token_ids for s in batch]),
        old=np.concatenate([s.old_logprobs for s in batch]),
        ref=np.concatenate([s.ref_logprobs for s in batch]) if have_ref else None,
        sample=sample,
        adv=np.array([s.advantage for s in batch], dtype=np.float64)[sample],
        weight=weight,
    )


def _ratios(params: PolicyParameters, flat: _Flat) -> tuple[np.ndarray, np.ndarray]:
    lp = token_logprobs(params.matrix, flat.feats, flat.ids)
    with np.errstate(over="ignore"):
        ratio = np.exp(lp - flat.old)
    if not np.isfinite(ratio).all():
        raise NonFiniteObjective("importance ratio overflowed")
    return lp, ratio


def _kl_terms(lp: np.ndarray, flat: _Flat) -> np.ndarray:
    if flat.ref is None:
        raise ValueError("kl_coefficient > 0 needs reference log-probabilities on every sample")
    d = flat.ref - lp
    return np.exp(d) - d - 1.0


def surrogate_objective(params: PolicyParameters, batch: Sequence[TrainSample], hp: HyperParams) -> float:
    flat = _flatten(batch)
    lp, ratio = _ratios(params, flat)
    eps = hp.clip_epsilon
    per_token = np.minimum(ratio * flat.adv, np.clip(ratio, 1 - eps, 1 + eps) * flat.adv)
    total = float(np.sum(per_token * flat.weight))
    if hp.kl_coefficient > 0:
        total -= hp.kl_coefficient * float(np.sum(_kl_terms(lp, flat) * flat.weight))
    return total


def objective_gradient(params: PolicyParameters, batch: Sequence[TrainSample], hp: HyperParams) -> np.ndarray:
    """Exact gradient of :func:`surrogate_objective` (flat, same layout as theta).

    Tokens whose clipped branch strictly binds carry no gradient.
    """
    flat = _flatten(batch)
    lp, ratio = _ratios(params, flat)
    eps = hp.clip_epsilon
    binding = ((flat.adv > 0) & (ratio > 1 + eps)) | ((flat.adv < 0) & (ratio < 1 - eps))
    w = np.where(binding, 0.0, flat.adv * ratio) * flat.weight
    if hp.kl_coefficient > 0:
        w = w - hp.kl_coefficient * (1.0 - np.exp(flat.ref - lp)) * flat.weight
    return weighted_logprob_grad(params.matrix, flat.feats, flat.ids, w).ravel()


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, hp: HyperParams | None = None) -> "OptimizerState":
        hp = hp or HyperParams()
        return cls(np.zeros(size), np.zeros(size), 0, hp.beta1, hp.beta2, hp.adam_eps)

    def copy(self) -> "OptimizerState":
        return dataclasses.replace(self, m=self.m.copy(), v=self.v.copy())


def clip_by_global_norm(gradient: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(gradient))
    if norm > max_norm:
        return gradient * (max_norm / norm), norm
    return gradient, norm


def optimizer_step(
    state: OptimizerState, theta: np.ndarray, gradient: np.ndarray, hp: HyperParams
) -> tuple[OptimizerState, np.ndarray]:
    """One ascent step: global-norm clip, decoupled weight decay, AdamW (or SGD)."""
    theta = np.asarray(theta, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    if theta.shape != gradient.shape or state.m.shape != theta.shape:
        raise DimensionMismatch(
            f"theta {theta.shape}, gradient {gradient.shape}, moments {state.m.shape} disagree"
        )
    g, _ = clip_by_global_norm(gradient, hp.grad_norm_clip)
    lr = hp.learning_rate
    decayed = theta * (1.0 - lr * hp.weight_decay)
    if hp.optimizer == "sgd":
        return dataclasses.replace(state, step=state.step + 1), decayed + lr * g
    t = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new_theta = decayed + lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return OptimizerState(m, v, t, state.beta1, state.beta2, state.eps), new_theta
