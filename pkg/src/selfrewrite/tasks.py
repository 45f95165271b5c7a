"""Verifiable synthetic tasks, task-file ingestion and the answer verifier."""

from __future__ import annotations

import json
import random
import re
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

from .prompts import generation_prompt

DEFAULT_MODULUS = 97
_OPS = ("+", "-", "*")
_TASK_FIELDS = ("task_id", "prompt_text", "gold_answer")
_BOX_OPEN = "\\boxed{"
_INT_RE = re.compile(r"[+-]?\d+")


@dataclass(frozen=True)
class TaskInstance:
    task_id: str
    prompt_text: str
    gold_answer: str
    difficulty: int = 0

    def __post_init__(self):
        if not self.task_id:
            raise ValueError("task_id must be non-empty")
        if not self.gold_answer.strip():
            raise ValueError(f"task {self.task_id}: gold_answer must be non-empty")
        if self.difficulty < 0:
            raise ValueError("difficulty must be non-negative")


class FailureKind(str, Enum):
    NONE = "none"
    NO_BOXED_ANSWER = "no_boxed_answer"
    MISMATCH = "mismatch"


@dataclass(frozen=True)
class VerifierOutcome:
    correct: bool
    parsed_answer: str | None
    failure_kind: FailureKind

    @classmethod
    def failed(cls) -> "VerifierOutcome":
        return cls(False, None, FailureKind.NO_BOXED_ANSWER)


def _chain_expression(rng: random.Random, difficulty: int, modulus: int) -> tuple[str, int]:
    value = rng.randrange(modulus)
    expr = str(value)
    for i in range(difficulty):
        op = rng.choice(_OPS)
        operand = rng.randrange(1, modulus)
        if op == "+":
            value = (value + operand) % modulus
        elif op == "-":
            value = (value - operand) % modulus
        else:
            value = (value * operand) % modulus
        expr = f"({expr} {op} {operand})" if i < difficulty - 1 else f"{expr} {op} {operand}"
    return expr, value


def make_task(seed: int, index: int, difficulty: int, modulus: int = DEFAULT_MODULUS) -> TaskInstance:
    """Build the ``index``-th synthetic task for ``(seed, difficulty, modulus)``."""
    rng = random.Random(f"{seed}:{difficulty}:{modulus}:{index}")
    expr, value = _chain_expression(rng, difficulty, modulus)
    query = f"Working modulo {modulus}, what is the value of the following? Let us compute: {expr}"
    return TaskInstance(
        task_id=f"mod{modulus}-s{seed}-d{difficulty}-{index:05d}",
        prompt_text=generation_prompt(query),
        gold_answer=str(value),
        difficulty=difficulty,
    )


def generate_task_set(
    seed: int, count: int, difficulty: int, modulus: int = DEFAULT_MODULUS
) -> list[TaskInstance]:
    """Deterministic list of modular-arithmetic chain tasks.

    Each instance depends only on ``(seed, difficulty, modulus, index)``, so a
    longer set always extends a shorter one.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if difficulty < 0:
        raise ValueError("difficulty must be non-negative")
    if modulus < 2:
        raise ValueError("modulus must be >= 2")
    return [make_task(seed, i, difficulty, modulus) for i in range(count)]


def extract_boxed(text: str) -> str | None:
    """Contents of the last balanced ``\\boxed{...}`` in ``text``, or None."""
    starts = [m.start() for m in re.finditer(re.escape(_BOX_OPEN), text)]
    for start in reversed(starts):
        depth = 1
        pos = start + len(_BOX_OPEN)
        while pos < len(text):
            ch = text[pos]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start + len(_BOX_OPEN) : pos]
            pos += 1
    return None


def canonicalize(answer: str) -> str:
    answer = answer.strip()
    if _INT_RE.fullmatch(answer):
        return str(int(answer))
    return answer


def verify(task: TaskInstance, answer_text: str) -> VerifierOutcome:
    parsed = extract_boxed(answer_text)
    if parsed is None:
        return VerifierOutcome(False, None, FailureKind.NO_BOXED_ANSWER)
    if canonicalize(parsed) == canonicalize(task.gold_answer):
        return VerifierOutcome(True, parsed, FailureKind.NONE)
    return VerifierOutcome(False, parsed, FailureKind.MISMATCH)


def load_task_file(path: str | Path) -> list[TaskInstance]:
    """Read newline-delimited JSON records ``{task_id, prompt_text, gold_answer}``."""
    tasks = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            record = json.loads(line)
            if not isinstance(record, dict) or set(record) != set(_TASK_FIELDS):
                raise ValueError(
                    f"{path}:{lineno}: expected exactly the fields {_TASK_FIELDS}"
                )
            if record["task_id"] in seen:
                raise ValueError(f"{path}:{lineno}: duplicate task_id {record['task_id']!r}")
            seen.add(record["task_id"])
            tasks.append(TaskInstance(**{k: str(record[k]) for k in _TASK_FIELDS}))
    return tasks


def write_task_file(tasks: Iterable[TaskInstance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for task in tasks:
            record = {k: v for k, v in asdict(task).items() if k in _TASK_FIELDS}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
