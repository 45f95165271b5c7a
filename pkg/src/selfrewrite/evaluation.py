"""Evaluation protocol: pass@1 over seeded runs, reasoning length and judge scores."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends.base import TEST_PARAMS, Backend, SamplingParams, derive_seed
from .backends.http import ChatEndpoint
from .backends.toy import ToyPolicy
from .checkpoint import load_checkpoint
from .config import JudgeConfig
from .judge import (
    DEFAULT_JUDGE_PARAMS,
    AggregateScore,
    ChatJudge,
    HeuristicJudge,
    JudgeBackend,
    JudgeRecord,
    MockJudge,
    aggregate,
    judge_passages,
)
from .tasks import TaskInstance, verify

EVAL_VERSION = 1


@dataclass(frozen=True)
class EvalSample:
    run: int
    task_id: str
    correct: bool
    failure_kind: str
    parsed_answer: str | None
    reasoning_tokens: int
    reasoning_text: str
    answer_text: str

    @property
    def passage_id(self) -> str:
        return f"run{self.run}:{self.task_id}"


@dataclass
class EvalResult:
    accuracy: float
    accuracy_per_run: list[float]
    mean_reasoning_tokens: float
    samples: list[EvalSample]
    judge: AggregateScore | None = None
    judgments: list[JudgeRecord] = field(default_factory=list)

    def summary(self) -> dict:
        out = {
            "artifact_version": EVAL_VERSION,
            "accuracy": self.accuracy,
            "accuracy_per_run": self.accuracy_per_run,
            "mean_reasoning_tokens": self.mean_reasoning_tokens,
            "runs": len(self.accuracy_per_run),
            "samples": len(self.samples),
            "judge": None,
        }
        if self.judge is not None:
            out["judge"] = {"count": self.judge.count, "means": self.judge.means, "scaled": self.judge.scaled}
        return out


def make_judge(config: JudgeConfig, sampling: SamplingParams = DEFAULT_JUDGE_PARAMS) -> JudgeBackend:
    if config.kind == "mock":
        return MockJudge()
    if config.kind == "heuristic":
        return HeuristicJudge()
    endpoint = ChatEndpoint(config.url, config.model, config.api_key_env or None, config.timeout, config.max_retries)
    return ChatJudge(endpoint, sampling)


def load_policy(checkpoint: str | Path) -> ToyPolicy:
    params, _, _ = load_checkpoint(checkpoint)
    return ToyPolicy(params)


def evaluate(
    model: Backend | str | Path,
    tasks: Sequence[TaskInstance],
    runs: int = 4,
    sampling: SamplingParams = TEST_PARAMS,
    seed: int = 0,
    run_seeds: Sequence[int] | None = None,
    judge: JudgeBackend | None = None,
    judge_retries: int = 2,
    judge_fraction: float = 1.0,
    judge_seed: int = 0,
    judge_workers: int = 1,
) -> EvalResult:
    """Sample every task once per run; accuracy is the mean of per-run pass@1.

    ``model`` is a backend or a checkpoint directory.  Run ``r`` uses seed
    ``run_seeds[r]`` (derived from ``seed`` when not given) and task ``i``
    draws with ``derive_seed(run_seed, i)``.
    """
    if not tasks:
        raise ValueError("task set is empty")
    backend = load_policy(model) if isinstance(model, (str, Path)) else model
    if run_seeds is None:
        if runs < 1:
            raise ValueError("runs must be positive")
        run_seeds = [derive_seed(seed, r) for r in range(runs)]
    samples: list[EvalSample] = []
    per_run = []
    for r, run_seed in enumerate(run_seeds):
        correct = []
        for i, task in enumerate(tasks):
            res = backend.generate(task, sampling.with_seed(derive_seed(run_seed, i)), 1)[0]
            outcome = verify(task, res.answer_text)
            correct.append(outcome.correct)
            samples.append(EvalSample(r, task.task_id, outcome.correct, outcome.failure_kind.value,
                                      outcome.parsed_answer, res.reasoning_token_count,
                                      res.reasoning_text, res.answer_text))
        per_run.append(float(np.mean(correct)))
    result = EvalResult(
        accuracy=float(np.mean(per_run)),
        accuracy_per_run=per_run,
        mean_reasoning_tokens=float(np.mean([s.reasoning_tokens for s in samples])),
        samples=samples,
    )
    if judge is not None:
        judged = [s for s in samples if s.reasoning_text.strip()]
        if judge_fraction < 1.0:
            rng = np.random.default_rng(judge_seed)
            keep = max(1, round(judge_fraction * len(judged)))
            judged = [judged[i] for i in sorted(rng.choice(len(judged), keep, replace=False))]
        if judged:
            result.judgments = judge_passages(
                {s.passage_id: s.reasoning_text for s in judged}, judge, judge_retries, judge_workers
            )
            result.judge = aggregate([rec.card for rec in result.judgments])
    return result


def write_evaluation(result: EvalResult, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "summary.json").write_text(json.dumps(result.summary(), indent=1, sort_keys=True) + "\n")
    with open(directory / "samples.jsonl", "w", encoding="utf-8") as fh:
        for s in result.samples:
            fh.write(json.dumps({"artifact_version": EVAL_VERSION, **asdict(s)}, sort_keys=True) + "\n")
    with open(directory / "judgments.jsonl", "w", encoding="utf-8") as fh:
        for rec in result.judgments:
            fh.write(json.dumps({"artifact_version": EVAL_VERSION, **rec.to_dict()}, sort_keys=True) + "\n")
    return directory


def read_summary(directory: str | Path) -> dict:
    return json.loads((Path(directory) / "summary.json").read_text())
