"""
Judging reasoning passages and summarizing length ratios
========================================================

This walk-through uses the offline judges.  ``HeuristicJudge`` is a
rule-based stand-in that penalizes repetition and excess length; a real
deployment points ``ChatJudge`` at any chat-completions endpoint with the
same prompt and parser.

It then builds the distribution of rewritten-to-original length ratios with a
Gaussian kernel density estimate and reports its median.
"""

import random

import numpy as np

from selfrewrite.analysis import kde_summary
from selfrewrite.backends.scripted import dedupe_consecutive
from selfrewrite.backends.toy import TOKEN_ID, decode
from selfrewrite.judge import HeuristicJudge, MockJudge, aggregate, build_judge_prompt, judge_passage, parse_judgment
from selfrewrite.warmstart import verbose_reasoning

# The judging prompt asks for five single-digit scores in a fenced block.
verbose = "7 7 wait wait 7 hmm 7 7 so 7 check check 7"
prompt = build_judge_prompt(verbose)
print(prompt[-400:])

# Parsing accepts the block as written by most models, emphasis included.
reply = "```\n**Aspect 1:** 2\nAspect 2: 5\nAspect 3: 4\nAspect 4: 1\nOverall: 3\n```"
print("\nparsed:", parse_judgment(reply))

# Verbose passage against its deduplicated rewrite.
rewritten = dedupe_consecutive(verbose)
judge = HeuristicJudge()
for label, text in (("original", verbose), ("rewritten", rewritten)):
    card = judge_passage(text, judge)
    print(f"{label:>10}: {text!r:<50} scores {card.scores()}")

# Aggregation scales mean scores to 0..100.
rng = random.Random(0)
originals = [decode(verbose_reasoning(TOKEN_ID[str(d % 10)], rng)) for d in range(200)]
rewrites = [dedupe_consecutive(t) for t in originals]
for label, texts in (("original", originals), ("rewritten", rewrites)):
    agg = aggregate([judge_passage(t, judge) for t in texts])
    print(f"{label:>10}: overall {agg.headline:.1f}  per aspect "
          + ", ".join(f"{k} {v:.1f}" for k, v in agg.scaled.items() if k != "overall"))

# The mock judge is deterministic per passage, which keeps tests reproducible.
assert judge_passage(verbose, MockJudge()) == judge_passage(verbose, MockJudge())

# Length ratio of each rewrite to its source, summarized by a KDE.
ratios = np.array([len(r.split()) / len(o.split()) for o, r in zip(originals, rewrites)])
summary = kde_summary(ratios)
print(f"\n{summary.count} ratios, median {summary.median:.2f}, Silverman bandwidth {summary.bandwidth:.3f}")
peak = summary.grid[np.argmax(summary.density)]
print(f"density peaks at {peak:.2f}; {np.mean(ratios >= 1):.0%} of rewrites are not shorter")
