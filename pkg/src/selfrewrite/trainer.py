"""Training loop, run-directory layout and resumption.

Run directory::

    config.ini        resolved configuration (exact)
    run.json          artifact version and fixed methodological choices
    steps.jsonl       one record per optimization step
    rollouts.jsonl    per-sample provenance and lengths, one record per step
    timing.jsonl      wall-clock seconds per step (kept apart so logs stay reproducible)
    checkpoints/      step_XXXXXX directories, step_000000 is the initial policy
    eval/ analysis/   written by evaluation and analysis commands
"""

from __future__ import annotations

import json
import logging
import shutil
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from filelock import FileLock, Timeout

from . import __version__
from .backends.base import Backend, derive_seed
from .backends.http import ChatCompletionsBackend, ChatEndpoint
from .backends.scripted import ScriptedBackend, ToyWithRewriter, dedupe_consecutive
from .backends.toy import PolicyParameters, ToyPolicy
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .errors import ConfigInvalid
from .grpo import OptimizerState, TrainSample, clip_by_global_norm, objective_gradient, optimizer_step, surrogate_objective
from .rewards import RewardVector, compute_advantages, shape_rewards
from .rollout import GateDecision, GroupRollout, RolloutParams, run_batch, run_vanilla_batch
from .tasks import TaskInstance
from .warmstart import verbose_reasoner

log = logging.getLogger(__name__)

ARTIFACT_VERSION = 1
RUN_METADATA = {
    "artifact_version": ARTIFACT_VERSION,
    "objective_normalization": "token mean within sample, then mean over samples",
    "length_unit": "reasoning tokens of the generating backend",
    "rewritten_group_scaling": "all advantages of a gated group",
}
_SEED_TASK_ORDER, _SEED_ROLLOUT = 1, 2


# ------------------------------------------------------------------ jsonl


def append_jsonl(path: Path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path: Path) -> list[dict]:
    if not Path(path).exists():
        return []
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def _truncate_jsonl(path: Path, last_step: int) -> None:
    if path.exists():
        keep = [r for r in read_jsonl(path) if r["step"] <= last_step]
        path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in keep))


# ------------------------------------------------------------------ setup


def checkpoint_dir(run_dir: Path, step: int) -> Path:
    return Path(run_dir) / "checkpoints" / f"step_{step:06d}"


def latest_checkpoint(run_dir: Path) -> Path | None:
    found = sorted(p for p in (Path(run_dir) / "checkpoints").glob("step_*") if not p.name.endswith(".tmp"))
    return found[-1] if found else None


def initial_parameters(config: RunConfig, tasks: list[TaskInstance]) -> PolicyParameters:
    b = config.backend
    if b.init == "zeros":
        return PolicyParameters.zeros(context_order=b.context_order)
    if b.init == "warmstart":
        return verbose_reasoner(tasks, b.warmstart_per_task, b.warmstart_seed, b.warmstart_steps, b.context_order)
    params, _, _ = load_checkpoint(b.init)
    return params


def build_backend(config: RunConfig, policy: ToyPolicy) -> Backend:
    b = config.backend
    if b.rewriter == "policy":
        return policy
    if b.rewriter == "dedupe":
        return ToyWithRewriter(policy, ScriptedBackend(rewrite_rule=dedupe_consecutive))
    endpoint = ChatEndpoint(b.url, b.model, b.api_key_env or None, b.timeout, b.max_retries)
    return ToyWithRewriter(policy, ChatCompletionsBackend(endpoint, b.max_workers))


def task_order(n_tasks: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng(derive_seed(seed, _SEED_TASK_ORDER, epoch)).permutation(n_tasks)


def batch_tasks(tasks: list[TaskInstance], batch_size: int, seed: int, step: int) -> list[TaskInstance]:
    """Queries for 1-based ``step``: consecutive slices of per-epoch permutations."""
    n = len(tasks)
    out = []
    for pos in range((step - 1) * batch_size, step * batch_size):
        epoch, i = divmod(pos, n)
        out.append(tasks[task_order(n, seed, epoch)[i]])
    return out


# ------------------------------------------------------------------ step


@dataclass
class StepResult:
    record: dict
    rollout_record: dict
    theta: np.ndarray
    state: OptimizerState


def _stats(values: np.ndarray) -> dict:
    return {"mean": float(values.mean()), "std": float(values.std()),
            "min": float(values.min()), "max": float(values.max())}


def train_step(
    config: RunConfig, policy: ToyPolicy, backend: Backend, state: OptimizerState,
    tasks: list[TaskInstance], step: int,
) -> StepResult:
    hp = config.hyperparams
    G, Q = hp.group_size, hp.batch_size
    queries = batch_tasks(tasks, Q, config.run.seed, step)
    seed = derive_seed(config.run.seed, _SEED_ROLLOUT, step)
    offset = (step - 1) * Q
    if config.run.algorithm == "grpo":
        groups = run_vanilla_batch(queries, backend, config.sample, G, seed, offset)
    else:
        params = RolloutParams(config.sample, config.rewrite, config.continuation)
        groups, _ = run_batch(queries, backend, params, config.gate, G, seed, offset, config.backend.max_workers)

    samples, shaped_all, adv_all = [], [], []
    tokens = {"vanilla": 0, "rewritten": 0}
    reasoning = {"vanilla": 0, "rewritten": 0}
    for g in groups:
        shaped = shape_rewards(RewardVector(g.raw_rewards(), g.rewritten_flags()))
        adv = compute_advantages(
            shaped, g.gate_decision is GateDecision.REWRITE, scale=hp.rewrite_advantage_scale
        )
        shaped_all.append(shaped.values.tolist())
        adv_all.append(adv.values)
        for s, a in zip(g.samples, adv.values):
            reasoning[s.provenance] += s.reasoning_tokens
            if not s.segments:
                continue
            sample = TrainSample.from_results(policy.params, s.segments, a, hp.cutoff_length)
            tokens[s.provenance] += int(sample.mask.sum())
            samples.append(sample)

    if samples:
        objective = surrogate_objective(policy.params, samples, hp)
        grad = objective_gradient(policy.params, samples, hp)
    else:
        log.warning("step %d: no trainable samples", step)
        objective, grad = 0.0, np.zeros(policy.params.size)
    _, grad_norm = clip_by_global_norm(grad, hp.grad_norm_clip)
    state, theta = optimizer_step(state, policy.params.theta, grad, hp)

    advantages = np.concatenate(adv_all)
    record = {
        "artifact_version": ARTIFACT_VERSION,
        "step": step,
        "task_ids": [t.task_id for t in queries],
        "gate_decisions": [g.gate_decision.value for g in groups],
        "raw_rewards": [g.raw_rewards().tolist() for g in groups],
        "shaped_rewards": shaped_all,
        "advantages": _stats(advantages),
        "objective": objective,
        "grad_norm": grad_norm,
        "tokens": tokens,
        "reasoning_tokens": reasoning,
        "failed_samples": sum(s.error is not None for g in groups for s in g.samples),
        "trainable_samples": len(samples),
    }
    rollout_record = {"artifact_version": ARTIFACT_VERSION, "step": step, "groups": [_group_record(g) for g in groups]}
    return StepResult(record, rollout_record, theta, state)


def _group_record(g: GroupRollout) -> dict:
    return {
        "task_id": g.task.task_id,
        "gate": g.gate_decision.value,
        "samples": [
            {"provenance": s.provenance, "source_index": s.source_index, "reasoning_tokens": s.reasoning_tokens,
             "correct": s.outcome.correct, "error": s.error}
            for s in g.samples
        ],
    }


# ------------------------------------------------------------------ loop


def _prepare(run_dir: Path, config: RunConfig) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    text = config.to_ini()
    stored = run_dir / "config.ini"
    if stored.exists() and stored.read_text() != text:
        raise ConfigInvalid(f"{run_dir} holds a run with a different configuration")
    stored.write_text(text)
    (run_dir / "run.json").write_text(json.dumps({**RUN_METADATA, "package_version": __version__}, indent=1, sort_keys=True) + "\n")
    for tmp in (run_dir / "checkpoints").glob("*.tmp"):
        shutil.rmtree(tmp)


def train(
    config: RunConfig,
    stop_after: int | None = None,
    on_step: Callable[[int, dict], None] | None = None,
) -> Path:
    """Train (or resume) the run described by ``config``; returns the run directory.

    ``stop_after`` ends the process after that global step without a final
    checkpoint, which is how tests emulate an interrupted run.
    """
    run_dir = Path(config.run.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(run_dir / ".lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout as err:
        raise ConfigInvalid(f"{run_dir} is locked by another trainer") from err
    try:
        _prepare(run_dir, config)
        tasks = config.tasks.load()
        latest = latest_checkpoint(run_dir)
        if latest is None:
            params = initial_parameters(config, tasks)
            state = OptimizerState.zeros(params.size, config.hyperparams)
            start = 0
            save_checkpoint(checkpoint_dir(run_dir, 0), params, state, 0, {"artifact_version": ARTIFACT_VERSION})
        else:
            params, state, manifest = load_checkpoint(latest)
            start = manifest["step"]
            log.info("resuming %s from step %d", run_dir, start)
        for name in ("steps.jsonl", "rollouts.jsonl", "timing.jsonl"):
            _truncate_jsonl(run_dir / name, start)

        policy = ToyPolicy(params)
        backend = build_backend(config, policy)
        every = config.run.checkpoint_every
        for step in range(start + 1, config.run.steps + 1):
            began = time.perf_counter()
            result = train_step(config, policy, backend, state, tasks, step)
            state = result.state
            policy.params = policy.params.with_theta(result.theta)
            append_jsonl(run_dir / "steps.jsonl", result.record)
            append_jsonl(run_dir / "rollouts.jsonl", result.rollout_record)
            append_jsonl(run_dir / "timing.jsonl", {"step": step, "wall_time": time.perf_counter() - began})
            if step % every == 0 or step == config.run.steps:
                save_checkpoint(checkpoint_dir(run_dir, step), policy.params, state, step,
                                {"artifact_version": ARTIFACT_VERSION})
            if on_step is not None:
                on_step(step, result.record)
            if stop_after is not None and step >= stop_after:
                break
        return run_dir
    finally:
        lock.release()
