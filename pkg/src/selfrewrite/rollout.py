"""Group rollouts with selective rewriting, phase-compiled batching and cost accounting.

Every request draws its randomness from a seed derived from
``(seed, query_index, slot, role)``, so results do not depend on how
requests are batched or in which order they complete.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Literal, Sequence

import numpy as np

from .backends.base import (
    REWRITE_PARAMS,
    SAMPLE_PARAMS,
    Backend,
    GenerationMode,
    GenerationResult,
    SamplingParams,
    derive_seed,
)
from .errors import BackendError
from .tasks import TaskInstance, VerifierOutcome, verify

log = logging.getLogger(__name__)

_ROLE_GENERATE, _ROLE_REWRITE, _ROLE_CONTINUE = 0, 1, 2


class GateKind(str, Enum):
    SELECTIVE = "selective"
    RANDOM = "random"
    NEVER = "never"


class GateDecision(str, Enum):
    REWRITE = "rewrite"
    VANILLA = "vanilla"


@dataclass(frozen=True)
class GatePolicy:
    kind: GateKind = GateKind.SELECTIVE
    fraction: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", GateKind(self.kind))
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")

    @classmethod
    def selective(cls) -> "GatePolicy":
        return cls(GateKind.SELECTIVE)

    @classmethod
    def random(cls, fraction: float, rng_seed: int = 0) -> "GatePolicy":
        return cls(GateKind.RANDOM, fraction, rng_seed)

    @classmethod
    def never(cls) -> "GatePolicy":
        return cls(GateKind.NEVER)


def gate(first_half: Sequence[VerifierOutcome], policy: GatePolicy, query_index: int) -> GateDecision:
    if not first_half:
        raise ValueError("first half of the group is empty")
    if policy.kind is GateKind.SELECTIVE:
        ok = all(o.correct for o in first_half)
    elif policy.kind is GateKind.RANDOM:
        ok = np.random.default_rng(derive_seed(policy.rng_seed, query_index)).random() < policy.fraction
    else:
        ok = False
    return GateDecision.REWRITE if ok else GateDecision.VANILLA


@dataclass
class RolloutSample:
    reasoning_text: str
    answer_text: str
    segments: list[GenerationResult]
    provenance: Literal["vanilla", "rewritten"]
    outcome: VerifierOutcome
    reasoning_tokens: int
    source_index: int | None = None  # 1-based slot of the rewritten first-half sample
    error: str | None = None

    @property
    def rewritten(self) -> bool:
        return self.provenance == "rewritten"


@dataclass
class GroupRollout:
    task: TaskInstance
    samples: list[RolloutSample]
    gate_decision: GateDecision
    query_index: int = 0

    def __post_init__(self):
        G = len(self.samples)
        if G < 2 or G % 2:
            raise ValueError("a group holds an even number (>= 2) of samples")
        half = G // 2
        if any(s.rewritten for s in self.samples[:half]):
            raise ValueError("the first half of a group is always vanilla")
        want = self.gate_decision is GateDecision.REWRITE
        if any(s.rewritten != want for s in self.samples[half:]):
            raise ValueError("second half provenance disagrees with the gate decision")

    @property
    def group_size(self) -> int:
        return len(self.samples)

    def raw_rewards(self) -> np.ndarray:
        return np.array([1.0 if s.outcome.correct else 0.0 for s in self.samples])

    def rewritten_flags(self) -> np.ndarray:
        return np.array([s.rewritten for s in self.samples])


@dataclass(frozen=True)
class RolloutParams:
    sample: SamplingParams = SAMPLE_PARAMS
    rewrite: SamplingParams = REWRITE_PARAMS
    continuation: SamplingParams = REWRITE_PARAMS


# ---------------------------------------------------------------- requests


@dataclass(frozen=True)
class Request:
    kind: GenerationMode
    query_index: int  # position within the batch
    slot: int  # 0-based position within the group
    source_slot: int | None = None


@dataclass
class BatchPlan:
    phase1: list[Request]
    phase2: list[Request]
    phase3: list[Request]
    token_budget: dict[str, int] = field(default_factory=dict)

    def phases(self) -> dict[str, list[Request]]:
        return {"phase1": self.phase1, "phase2": self.phase2, "phase3": self.phase3}


def plan_phase1(Q: int, G: int) -> list[Request]:
    return [Request(GenerationMode.GENERATE, q, s) for q in range(Q) for s in range(G // 2)]


def plan_batches(
    gate_decisions: Sequence[GateDecision],
    Q: int,
    G: int,
    params: RolloutParams | None = None,
) -> BatchPlan:
    """Three phases: first halves; one joint rewrite+generate batch; continuations."""
    if len(gate_decisions) != Q:
        raise ValueError("need one gate decision per query")
    if G < 2 or G % 2:
        raise ValueError("group size must be even")
    params = params or RolloutParams()
    half = G // 2
    phase2, phase3 = [], []
    for q, decision in enumerate(gate_decisions):
        for j in range(half):
            if GateDecision(decision) is GateDecision.REWRITE:
                phase2.append(Request(GenerationMode.REWRITE, q, half + j, source_slot=j))
                phase3.append(Request(GenerationMode.CONTINUE, q, half + j, source_slot=j))
            else:
                phase2.append(Request(GenerationMode.GENERATE, q, half + j))
    phase1 = plan_phase1(Q, G)
    max_tokens = {
        GenerationMode.GENERATE: params.sample.max_new_tokens,
        GenerationMode.REWRITE: params.rewrite.max_new_tokens,
        GenerationMode.CONTINUE: params.continuation.max_new_tokens,
    }
    budget = {
        name: sum(max_tokens[r.kind] for r in reqs)
        for name, reqs in (("phase1", phase1), ("phase2", phase2), ("phase3", phase3))
    }
    return BatchPlan(phase1, phase2, phase3, budget)


# ---------------------------------------------------------------- execution


def request_seed(seed: int, query_index: int, slot: int, role: int) -> int:
    return derive_seed(seed, query_index, slot, role)


def _failed(provenance, error: str, source_index=None) -> RolloutSample:
    return RolloutSample("", "", [], provenance, VerifierOutcome.failed(), 0, source_index, error)


def _vanilla_sample(task: TaskInstance, result: GenerationResult) -> RolloutSample:
    outcome = verify(task, result.answer_text)
    return RolloutSample(result.reasoning_text, result.answer_text, [result], "vanilla", outcome, result.reasoning_token_count)


def _rewritten_sample(
    task: TaskInstance, rewrite: GenerationResult, cont: GenerationResult, source_index: int
) -> RolloutSample:
    outcome = verify(task, cont.answer_text)
    return RolloutSample(
        rewrite.reasoning_text, cont.answer_text, [rewrite, cont], "rewritten",
        outcome, rewrite.reasoning_token_count, source_index,
    )


def _call(fn: Callable[[], GenerationResult]) -> GenerationResult | str:
    try:
        return fn()
    except BackendError as err:
        log.warning("request failed: %s", err)
        return f"{type(err).__name__}: {err}"


def _do_generate(backend, task, params, seed, qi, slot):
    return _call(lambda: backend.generate(task, params.sample.with_seed(request_seed(seed, qi, slot, _ROLE_GENERATE)), 1)[0])


def _do_rewrite(backend, source: str, params, seed, qi, slot):
    if not source.strip():
        return "empty source passage"
    return _call(lambda: backend.rewrite(source, params.rewrite.with_seed(request_seed(seed, qi, slot, _ROLE_REWRITE))))


def _do_continue(backend, task, reasoning: str, params, seed, qi, slot):
    if not reasoning.strip():
        return "empty rewritten passage"
    return _call(
        lambda: backend.continue_answer(
            task, reasoning, params.continuation.with_seed(request_seed(seed, qi, slot, _ROLE_CONTINUE))
        )
    )


def run_group(
    task: TaskInstance,
    backend: Backend,
    params: RolloutParams,
    policy: GatePolicy,
    group_size: int = 8,
    seed: int = 0,
    query_index: int = 0,
) -> GroupRollout:
    """Sequential reference execution of one query's rollout."""
    if group_size < 2 or group_size % 2:
        raise ValueError("group size must be even")
    half = group_size // 2
    samples: list[RolloutSample] = []
    for slot in range(half):
        res = _do_generate(backend, task, params, seed, query_index, slot)
        samples.append(_failed("vanilla", res) if isinstance(res, str) else _vanilla_sample(task, res))
    decision = gate([s.outcome for s in samples], policy, query_index)
    for j in range(half):
        slot = half + j
        if decision is GateDecision.REWRITE:
            rw = _do_rewrite(backend, samples[j].reasoning_text, params, seed, query_index, slot)
            if isinstance(rw, str):
                samples.append(_failed("rewritten", rw, j + 1))
                continue
            cont = _do_continue(backend, task, rw.reasoning_text, params, seed, query_index, slot)
            if isinstance(cont, str):
                samples.append(_failed("rewritten", cont, j + 1))
                continue
            samples.append(_rewritten_sample(task, rw, cont, j + 1))
        else:
            res = _do_generate(backend, task, params, seed, query_index, slot)
            samples.append(_failed("vanilla", res) if isinstance(res, str) else _vanilla_sample(task, res))
    return GroupRollout(task, samples, decision, query_index)


def _run_phase(jobs: list[Callable[[], object]], max_workers: int) -> list[object]:
    if max_workers <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]


def run_batch(
    tasks: Sequence[TaskInstance],
    backend: Backend,
    params: RolloutParams,
    policy: GatePolicy,
    group_size: int = 8,
    seed: int = 0,
    query_offset: int = 0,
    max_workers: int = 1,
) -> tuple[list[GroupRollout], BatchPlan]:
    """Phase-compiled execution of a batch of queries.

    Phases are barriers; within a phase requests may run concurrently and
    results are re-associated by ``(query_index, slot)``.
    """
    Q, G = len(tasks), group_size
    if G < 2 or G % 2:
        raise ValueError("group size must be even")
    half = G // 2
    qi = [query_offset + q for q in range(Q)]

    phase1 = plan_phase1(Q, G)
    out1 = _run_phase(
        [lambda r=r: _do_generate(backend, tasks[r.query_index], params, seed, qi[r.query_index], r.slot) for r in phase1],
        max_workers,
    )
    slots: dict[tuple[int, int], RolloutSample] = {}
    for r, res in zip(phase1, out1):
        task = tasks[r.query_index]
        slots[(r.query_index, r.slot)] = _failed("vanilla", res) if isinstance(res, str) else _vanilla_sample(task, res)

    decisions = [gate([slots[(q, s)].outcome for s in range(half)], policy, qi[q]) for q in range(Q)]
    plan = plan_batches(decisions, Q, G, params)

    def phase2_job(r: Request):
        task = tasks[r.query_index]
        if r.kind is GenerationMode.REWRITE:
            source = slots[(r.query_index, r.source_slot)].reasoning_text
            return _do_rewrite(backend, source, params, seed, qi[r.query_index], r.slot)
        return _do_generate(backend, task, params, seed, qi[r.query_index], r.slot)

    out2 = _run_phase([lambda r=r: phase2_job(r) for r in plan.phase2], max_workers)
    rewrites: dict[tuple[int, int], GenerationResult | str] = {}
    for r, res in zip(plan.phase2, out2):
        if r.kind is GenerationMode.REWRITE:
            rewrites[(r.query_index, r.slot)] = res
        else:
            task = tasks[r.query_index]
            slots[(r.query_index, r.slot)] = _failed("vanilla", res) if isinstance(res, str) else _vanilla_sample(task, res)

    def phase3_job(r: Request):
        rw = rewrites[(r.query_index, r.slot)]
        if isinstance(rw, str):
            return rw
        return _do_continue(backend, tasks[r.query_index], rw.reasoning_text, params, seed, qi[r.query_index], r.slot)

    out3 = _run_phase([lambda r=r: phase3_job(r) for r in plan.phase3], max_workers)
    for r, cont in zip(plan.phase3, out3):
        rw = rewrites[(r.query_index, r.slot)]
        src = r.source_slot + 1
        if isinstance(cont, str):
            slots[(r.query_index, r.slot)] = _failed("rewritten", cont, src)
        else:
            slots[(r.query_index, r.slot)] = _rewritten_sample(tasks[r.query_index], rw, cont, src)

    groups = [
        GroupRollout(tasks[q], [slots[(q, s)] for s in range(G)], decisions[q], qi[q]) for q in range(Q)
    ]
    n_failed = sum(s.error is not None for g in groups for s in g.samples)
    if n_failed:
        log.warning("%d of %d samples failed and were scored incorrect", n_failed, Q * G)
    return groups, plan


# ---------------------------------------------------------------- overhead


@dataclass(frozen=True)
class CostModel:
    """Expected token counts per request kind and per-token costs per phase.

    ``aggregate="sum"`` totals the cost of every request (throughput view);
    ``"barrier"`` charges each phase the cost of its most expensive request,
    as when all requests of a phase decode in parallel and the next phase
    waits for the slowest.  Context tokens are charged at ``prefill_cost``.
    """

    generate_tokens: float
    continue_tokens: float
    rewrite_tokens: float | None = None
    prompt_tokens: float = 0.0
    rewrite_instruction_tokens: float = 0.0
    phase_costs: tuple[float, float, float] = (1.0, 1.0, 1.0)
    prefill_cost: float = 0.0
    aggregate: Literal["sum", "barrier"] = "sum"

    def __post_init__(self):
        values = [self.generate_tokens, self.continue_tokens, self.prompt_tokens,
                  self.rewrite_instruction_tokens, self.prefill_cost, *self.phase_costs]
        if self.rewrite_tokens is not None:
            values.append(self.rewrite_tokens)
        if min(values) < 0:
            raise ValueError("costs and token counts must be non-negative")
        if self.aggregate not in ("sum", "barrier"):
            raise ValueError("aggregate must be 'sum' or 'barrier'")

    def request_cost(self, kind: GenerationMode, phase: int) -> float:
        decode = self.phase_costs[phase - 1]
        rewrite_tokens = self.generate_tokens if self.rewrite_tokens is None else self.rewrite_tokens
        if kind is GenerationMode.GENERATE:
            context, generated = self.prompt_tokens, self.generate_tokens
        elif kind is GenerationMode.REWRITE:
            context, generated = self.rewrite_instruction_tokens + self.generate_tokens, rewrite_tokens
        else:
            context, generated = self.prompt_tokens + rewrite_tokens + 1, self.continue_tokens
        return self.prefill_cost * context + decode * generated

    def phase_cost(self, requests: Sequence[Request], phase: int) -> float:
        costs = [self.request_cost(r.kind, phase) for r in requests]
        if not costs:
            return 0.0
        return float(sum(costs)) if self.aggregate == "sum" else float(max(costs))

    def plan_cost(self, plan: BatchPlan) -> float:
        return (
            self.phase_cost(plan.phase1, 1) + self.phase_cost(plan.phase2, 2) + self.phase_cost(plan.phase3, 3)
        )


def vanilla_equivalent(plan: BatchPlan) -> BatchPlan:
    phase2 = [Request(GenerationMode.GENERATE, r.query_index, r.slot) for r in plan.phase2]
    return BatchPlan(list(plan.phase1), phase2, [], {})


def overhead_report(plan: BatchPlan, cost_model: CostModel) -> float:
    """Relative extra cost of the plan over plain generation of the same samples."""
    base = cost_model.plan_cost(vanilla_equivalent(plan))
    if base == 0:
        raise ValueError("vanilla plan has zero cost; overhead undefined")
    return (cost_model.plan_cost(plan) - base) / base


def run_vanilla_batch(
    tasks: Sequence[TaskInstance],
    backend: Backend,
    sample_params: SamplingParams,
    group_size: int = 8,
    seed: int = 0,
    query_offset: int = 0,
) -> list[GroupRollout]:
    """Reference plain-GRPO rollout: every sample is generated, no gate is consulted."""
    groups = []
    for q, task in enumerate(tasks):
        qi = query_offset + q
        samples = []
        for slot in range(group_size):
            res = _call(lambda: backend.generate(
                task, sample_params.with_seed(request_seed(seed, qi, slot, _ROLE_GENERATE)), 1)[0])
            samples.append(_failed("vanilla", res) if isinstance(res, str) else _vanilla_sample(task, res))
        groups.append(GroupRollout(task, samples, GateDecision.VANILLA, qi))
    return groups
