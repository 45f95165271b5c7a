import itertools

import numpy as np
import pytest

from selfrewrite.backends.base import GenerationMode, SamplingParams
from selfrewrite.backends.scripted import (
    ScriptedBackend,
    ToyWithRewriter,
    always_correct,
    always_incorrect,
    correct_with_probability,
)
from selfrewrite.backends.toy import ToyPolicy
from selfrewrite.rollout import (
    CostModel,
    GateDecision,
    GatePolicy,
    GroupRollout,
    RolloutParams,
    gate,
    overhead_report,
    plan_batches,
    run_batch,
    run_group,
    run_vanilla_batch,
)
from selfrewrite.tasks import FailureKind, VerifierOutcome, generate_task_set
from selfrewrite.warmstart import verbose_reasoner

OK = VerifierOutcome(True, "1", FailureKind.NONE)
BAD = VerifierOutcome(False, "2", FailureKind.MISMATCH)
R, VAN = GateDecision.REWRITE, GateDecision.VANILLA
TASKS = generate_task_set(0, 6, 0, modulus=10)
SMALL = RolloutParams(SamplingParams(max_new_tokens=40), SamplingParams(0.6, 0.95, 20, 40),
                      SamplingParams(0.6, 0.95, 20, 40))


@pytest.fixture(scope="module")
def toy_backend():
    params = verbose_reasoner(TASKS, per_task=3, steps=150)
    return ToyWithRewriter(ToyPolicy(params), ScriptedBackend())


def test_gate_examples():
    sel = GatePolicy.selective()
    assert gate([OK] * 4, sel, 0) is R
    assert gate([OK, BAD, OK, OK], sel, 0) is VAN
    assert gate([OK] * 4, GatePolicy.never(), 0) is VAN


@pytest.mark.parametrize("half", range(1, 7))
def test_selective_gate_is_conjunction(half):
    for pattern in itertools.product([True, False], repeat=half):
        outcomes = [OK if p else BAD for p in pattern]
        assert (gate(outcomes, GatePolicy.selective(), 3) is R) == all(pattern)


def test_random_gate_is_seeded():
    policy = GatePolicy.random(0.5, rng_seed=9)
    first = [gate([BAD], policy, q) for q in range(400)]
    assert first == [gate([BAD], policy, q) for q in range(400)]
    assert 0.4 < np.mean([d is R for d in first]) < 0.6
    assert all(gate([BAD], GatePolicy.random(1.0), q) is R for q in range(20))
    assert all(gate([OK], GatePolicy.random(0.0), q) is VAN for q in range(20))


def test_gate_rejects_empty_half():
    with pytest.raises(ValueError):
        gate([], GatePolicy.selective(), 0)


def test_run_group_always_correct_rewrites():
    g = run_group(TASKS[0], ScriptedBackend(always_correct), RolloutParams(), GatePolicy.selective(), 8)
    assert g.gate_decision is R
    assert [s.provenance for s in g.samples] == ["vanilla"] * 4 + ["rewritten"] * 4
    assert [s.source_index for s in g.samples[4:]] == [1, 2, 3, 4]
    assert all(s.outcome.correct for s in g.samples)


def test_rewritten_sample_is_one_to_one():
    texts = iter(["a a b", "c c", "d", "e e e"])
    backend = ScriptedBackend(lambda task, rng: next(texts) + f" </think> \\boxed{{{task.gold_answer}}}")
    g = run_group(TASKS[0], backend, RolloutParams(), GatePolicy.selective(), 8)
    assert [s.reasoning_text for s in g.samples[4:]] == ["a b", "c", "d", "e"]


def test_run_group_always_incorrect_is_vanilla():
    g = run_group(TASKS[0], ScriptedBackend(always_incorrect), RolloutParams(), GatePolicy.selective(), 8)
    assert g.gate_decision is VAN and all(s.provenance == "vanilla" for s in g.samples)
    assert not g.raw_rewards().any()


def test_minimal_group():
    g = run_group(TASKS[0], ScriptedBackend(always_correct), RolloutParams(), GatePolicy.selective(), 2)
    assert g.gate_decision is R and g.samples[1].source_index == 1


def test_odd_group_rejected():
    with pytest.raises(ValueError):
        run_group(TASKS[0], ScriptedBackend(), RolloutParams(), GatePolicy.selective(), 3)


def test_group_invariants_enforced():
    g = run_group(TASKS[0], ScriptedBackend(always_correct), RolloutParams(), GatePolicy.selective(), 4)
    with pytest.raises(ValueError):
        GroupRollout(g.task, g.samples, VAN)
    with pytest.raises(ValueError):
        GroupRollout(g.task, g.samples[2:] + g.samples[:2], R)


def test_plan_examples():
    plan = plan_batches([R, VAN], 2, 4)
    assert len(plan.phase1) == 4
    kinds = [r.kind for r in plan.phase2]
    assert kinds.count(GenerationMode.REWRITE) == 2 and kinds.count(GenerationMode.GENERATE) == 2
    assert len(plan.phase3) == 2
    assert [(r.query_index, r.slot, r.source_slot) for r in plan.phase3] == [(0, 2, 0), (0, 3, 1)]
    assert plan_batches([VAN] * 3, 3, 4).phase3 == []
    allr = plan_batches([R] * 3, 3, 8)
    assert all(r.kind is GenerationMode.REWRITE for r in allr.phase2) and len(allr.phase3) == 12


def test_plan_sizes_property():
    rng = np.random.default_rng(0)
    for _ in range(50):
        Q, G = int(rng.integers(1, 6)), 2 * int(rng.integers(1, 5))
        decisions = [R if x else VAN for x in rng.random(Q) < 0.5]
        plan = plan_batches(decisions, Q, G)
        gated = sum(d is R for d in decisions)
        assert (len(plan.phase1), len(plan.phase2), len(plan.phase3)) == (Q * G // 2, Q * G // 2, gated * G // 2)
        addresses = [(r.query_index, r.slot) for r in plan.phase2]
        assert len(set(addresses)) == len(addresses)


@pytest.mark.parametrize("workers", [1, 4])
def test_batch_matches_sequential(toy_backend, workers):
    groups, plan = run_batch(TASKS, toy_backend, SMALL, GatePolicy.selective(), 8, seed=5, query_offset=10,
                             max_workers=workers)
    reference = [run_group(t, toy_backend, SMALL, GatePolicy.selective(), 8, seed=5, query_index=10 + q)
                 for q, t in enumerate(TASKS)]
    assert groups == reference
    decisions = [g.gate_decision for g in groups]
    assert R in decisions and VAN in decisions
    assert sum(s.rewritten for g in groups for s in g.samples) == decisions.count(R) * 4
    assert len(plan.phase3) == decisions.count(R) * 4


def test_vanilla_batch_equals_never_gate(toy_backend):
    a, _ = run_batch(TASKS, toy_backend, SMALL, GatePolicy.never(), 4, seed=2)
    b = run_vanilla_batch(TASKS, toy_backend, SMALL.sample, 4, seed=2)
    assert a == b


def test_failures_degrade_to_incorrect_samples():
    fail = lambda mode, key: mode is GenerationMode.REWRITE and key.startswith("let")
    backend = ScriptedBackend(always_correct, fail=fail)
    groups, _ = run_batch(TASKS[:2], backend, RolloutParams(), GatePolicy.selective(), 4)
    for g in groups:
        assert g.gate_decision is R
        for s in g.samples[2:]:
            assert s.error and not s.outcome.correct
            assert s.outcome.failure_kind is FailureKind.NO_BOXED_ANSWER
            assert s.rewritten and s.source_index in (1, 2)


def test_empty_source_passage_counts_as_failure():
    backend = ScriptedBackend(lambda task, rng: f"</think> \\boxed{{{task.gold_answer}}}")
    g = run_group(TASKS[0], backend, RolloutParams(), GatePolicy.selective(), 4)
    assert g.gate_decision is R
    assert all(s.error == "empty source passage" for s in g.samples[2:])


def test_random_gate_in_batch_is_reproducible():
    backend = ScriptedBackend(correct_with_probability(0.5))
    policy = GatePolicy.random(0.5, 3)
    a, _ = run_batch(TASKS, backend, RolloutParams(), policy, 4, seed=1)
    b, _ = run_batch(TASKS, backend, RolloutParams(), policy, 4, seed=1)
    assert [g.gate_decision for g in a] == [g.gate_decision for g in b]


# ---------------------------------------------------------------- overhead


def sum_oracle(decisions, G, L, c):
    """Spreadsheet view: one line per request, cost = generated tokens."""
    half = G // 2
    rows = []
    for d in decisions:
        rows += [("gen", L)] * half
        rows += [("rewrite", L)] * half if d is R else [("gen", L)] * half
        rows += [("cont", c)] * half if d is R else []
    vanilla = sum(L for _ in decisions for _ in range(G))
    return (sum(cost for _, cost in rows) - vanilla) / vanilla


def test_overhead_zero_without_gating():
    plan = plan_batches([VAN] * 4, 4, 8)
    assert overhead_report(plan, CostModel(generate_tokens=100, continue_tokens=5)) == 0.0


def test_overhead_all_gated_matches_summation():
    # integer token counts keep both summations exact in floating point
    L, c = 4000.0, 200.0
    model = CostModel(generate_tokens=L, continue_tokens=c)
    for decisions in ([R] * 4, [R, VAN, VAN, R]):
        plan = plan_batches(decisions, len(decisions), 8)
        assert overhead_report(plan, model) == sum_oracle(decisions, 8, L, c)
    assert overhead_report(plan_batches([R] * 4, 4, 8), model) == pytest.approx(0.05 * 0.5)


def test_overhead_scale_invariance():
    plan = plan_batches([R, VAN, R], 3, 8)
    a = CostModel(100, 5, 120, prompt_tokens=30, phase_costs=(1.0, 1.5, 2.0), prefill_cost=0.1)
    b = CostModel(100, 5, 120, prompt_tokens=30, phase_costs=(2.0, 3.0, 4.0), prefill_cost=0.2)
    assert overhead_report(plan, a) == pytest.approx(overhead_report(plan, b), rel=1e-12)


def test_barrier_overhead_profile():
    L = 4243.0
    plan = plan_batches([R, VAN] * 8, 16, 8)
    model = CostModel(L, 0.05 * L, rewrite_tokens=1.1 * L, aggregate="barrier")
    assert overhead_report(plan, model) == pytest.approx((1.1 * L + 0.05 * L - L) / (2 * L))


def test_cost_model_validation():
    with pytest.raises(ValueError):
        CostModel(-1, 0)
    with pytest.raises(ValueError):
        CostModel(1, 0, aggregate="mean")
