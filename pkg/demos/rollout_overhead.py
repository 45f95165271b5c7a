"""
What rewriting costs at rollout time
====================================

Rollouts run in three phases.  Phase 1 generates the first half of every
group.  Phase 2 is one joint batch: fresh generations for queries that were
not all correct and rewrites for those that were.  Phase 3 continues each
rewritten passage with a short answer.

``overhead_report`` prices a batch plan with a cost model and compares it with
plain generation of the same number of samples.  Two views are shown:

* ``sum`` totals decoded tokens, a throughput view.  A rewrite decodes about
  half as many tokens as a fresh generation, so this view can go negative.
* ``barrier`` charges each phase its slowest request, the wall-clock view of a
  synchronous rollout engine.  Any gated query adds the continuation phase,
  and the slowest rewrite runs slightly longer than the slowest generation.
"""

from selfrewrite.rollout import CostModel, GateDecision, overhead_report, plan_batches

L = 4243.0  # mean response length in tokens
Q, G = 64, 8

print(f"{'gated':>6}{'sum':>8}{'barrier':>9}")
for gated in (0, 16, 32, 48, 64):
    decisions = [GateDecision.REWRITE] * gated + [GateDecision.VANILLA] * (Q - gated)
    plan = plan_batches(decisions, Q, G)
    throughput = CostModel(L, 0.05 * L, rewrite_tokens=0.5 * L)
    wall = CostModel(L, 0.05 * L, rewrite_tokens=1.1 * L, aggregate="barrier")
    print(f"{gated / Q:>6.0%}{overhead_report(plan, throughput):>8.1%}{overhead_report(plan, wall):>9.1%}")

# Rewrites read the whole source passage.  Charging prompt tokens at a small
# fraction of a decoded token shows how prefill moves the picture.
plan = plan_batches([GateDecision.REWRITE, GateDecision.VANILLA] * (Q // 2), Q, G)
print("\nhalf gated, barrier view, with prefill")
for prefill in (0.0, 0.02, 0.05, 0.1):
    model = CostModel(L, 0.05 * L, rewrite_tokens=1.1 * L, prompt_tokens=200, rewrite_instruction_tokens=250,
                      prefill_cost=prefill, aggregate="barrier")
    print(f"  prefill cost {prefill:>4}: overhead {overhead_report(plan, model):.1%}")
