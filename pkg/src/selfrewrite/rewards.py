"""Reward reassignment for rewritten groups and group-normalized advantages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STD_EPS = 1e-6
REWRITE_ADVANTAGE_SCALE = 5.0


@dataclass(frozen=True)
class RewardVector:
    values: np.ndarray
    rewritten: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        rewritten = np.asarray(self.rewritten, dtype=bool)
        if values.shape != rewritten.shape or values.ndim != 1:
            raise ValueError("values and provenance flags must be 1-D and equally long")
        if values.size % 2:
            raise ValueError("group size must be even")
        if not np.isin(values, (0.0, 1.0)).all():
            raise ValueError("rewards must be binary")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "rewritten", rewritten)


@dataclass(frozen=True)
class AdvantageVector:
    values: np.ndarray
    scaled: bool
    group_mean: float
    group_std: float


def shape_rewards(raw: RewardVector) -> RewardVector:
    """Prefer rewrites inside fully correct groups; otherwise keep correctness.

    The all-correct test runs over the whole group, rewritten continuations
    included, so one wrong continuation restores plain correctness rewards.
    """
    if not raw.values.all() or not raw.rewritten.any():
        return raw
    return RewardVector(raw.rewritten.astype(np.float64), raw.rewritten)


def compute_advantages(
    shaped: RewardVector | np.ndarray,
    group_was_rewritten: bool,
    scale: float = REWRITE_ADVANTAGE_SCALE,
    eps: float = STD_EPS,
) -> AdvantageVector:
    r = np.asarray(shaped.values if isinstance(shaped, RewardVector) else shaped, dtype=np.float64)
    mean = float(r.mean())
    std = float(r.std())  # population std
    if std > eps:
        adv = (r - mean) / std
    else:
        adv = np.zeros_like(r)
    if group_was_rewritten:
        adv = adv / scale
    return AdvantageVector(adv, bool(group_was_rewritten), mean, std)
