"""Run configuration: nested dataclasses stored as a flat INI file.

Every section mirrors one dataclass and every key one field; values are
written in a canonical form so that serialize -> parse -> serialize is
byte-stable.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .backends.base import REWRITE_PARAMS, SAMPLE_PARAMS, TEST_PARAMS, SamplingParams
from .errors import ConfigInvalid
from .grpo import HyperParams
from .judge import DEFAULT_JUDGE_PARAMS
from .rollout import GatePolicy
from .tasks import DEFAULT_MODULUS, TaskInstance, generate_task_set, load_task_file

ALGORITHMS = ("self_rewrite", "grpo")
INITS = ("warmstart", "zeros")
REWRITERS = ("policy", "dedupe", "chat")
JUDGES = ("mock", "heuristic", "chat")


@dataclass(frozen=True)
class TaskSource:
    """Synthetic ``(seed, count, difficulty, modulus)`` tasks, or a JSONL file when ``path`` is set."""

    seed: int = 0
    count: int = 64
    difficulty: int = 0
    modulus: int = DEFAULT_MODULUS
    path: str = ""

    def load(self) -> list[TaskInstance]:
        if self.path:
            return load_task_file(self.path)
        return generate_task_set(self.seed, self.count, self.difficulty, self.modulus)

    @classmethod
    def parse(cls, text: str) -> "TaskSource":
        """``synthetic:seed=7,count=100,difficulty=0,modulus=10`` or a file path."""
        if not text.startswith("synthetic:"):
            return cls(path=text)
        values = {}
        for item in filter(None, text[len("synthetic:"):].split(",")):
            key, _, value = item.partition("=")
            if key not in ("seed", "count", "difficulty", "modulus"):
                raise ConfigInvalid(f"unknown task-source key {key!r}")
            values[key] = int(value)
        return cls(**values)


@dataclass(frozen=True)
class BackendConfig:
    """Trainable toy policy plus the backend used for rewrites.

    ``init`` is ``warmstart``, ``zeros`` or a checkpoint directory.
    ``rewriter`` is ``policy`` (the toy policy itself), ``dedupe`` (scripted
    removal of repeated tokens) or ``chat`` (external endpoint).
    """

    context_order: int = 3
    init: str = "warmstart"
    warmstart_per_task: int = 5
    warmstart_steps: int = 300
    warmstart_seed: int = 0
    rewriter: str = "dedupe"
    url: str = ""
    model: str = ""
    api_key_env: str = ""
    timeout: float = 60.0
    max_retries: int = 3
    max_workers: int = 1


@dataclass(frozen=True)
class RunSettings:
    output_dir: str = "runs/default"
    seed: int = 0
    steps: int = 200
    checkpoint_every: int = 50
    algorithm: str = "self_rewrite"


@dataclass(frozen=True)
class JudgeConfig:
    kind: str = "mock"
    url: str = ""
    model: str = ""
    api_key_env: str = ""
    timeout: float = 60.0
    max_retries: int = 3
    retries: int = 2
    fraction: float = 1.0
    seed: int = 0
    max_workers: int = 1


_DESK_SAMPLE = dataclasses.replace(SAMPLE_PARAMS, max_new_tokens=200)
_DESK_REWRITE = dataclasses.replace(REWRITE_PARAMS, max_new_tokens=200)
_DESK_TEST = dataclasses.replace(TEST_PARAMS, max_new_tokens=200)


@dataclass(frozen=True)
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    tasks: TaskSource = field(default_factory=TaskSource)
    backend: BackendConfig = field(default_factory=BackendConfig)
    gate: GatePolicy = field(default_factory=GatePolicy)
    hyperparams: HyperParams = field(default_factory=HyperParams)
    sample: SamplingParams = _DESK_SAMPLE
    rewrite: SamplingParams = _DESK_REWRITE
    continuation: SamplingParams = _DESK_REWRITE
    test: SamplingParams = _DESK_TEST
    judge: JudgeConfig = field(default_factory=JudgeConfig)
    judge_sampling: SamplingParams = DEFAULT_JUDGE_PARAMS

    def __post_init__(self):
        if self.run.algorithm not in ALGORITHMS:
            raise ConfigInvalid(f"run.algorithm must be one of {ALGORITHMS}")
        if self.backend.rewriter not in REWRITERS:
            raise ConfigInvalid(f"backend.rewriter must be one of {REWRITERS}")
        if self.judge.kind not in JUDGES:
            raise ConfigInvalid(f"judge.kind must be one of {JUDGES}")
        if self.run.steps < 1 or self.run.checkpoint_every < 1:
            raise ConfigInvalid("run.steps and run.checkpoint_every must be positive")
        if self.hyperparams.batch_size < 1:
            raise ConfigInvalid("hyperparams.batch_size must be positive")
        if not 0.0 < self.judge.fraction <= 1.0:
            raise ConfigInvalid("judge.fraction must lie in (0, 1]")

    def replace(self, **sections) -> "RunConfig":
        """Replace whole sections, or fields via ``{"section": {"key": value}}``."""
        changes = {}
        for name, value in sections.items():
            if isinstance(value, dict):
                value = dataclasses.replace(getattr(self, name), **value)
            changes[name] = value
        return dataclasses.replace(self, **changes)

    # ------------------------------------------------------------ text form

    def to_ini(self) -> str:
        lines = []
        for section in dataclasses.fields(self):
            lines.append(f"[{section.name}]")
            obj = getattr(self, section.name)
            for f in dataclasses.fields(obj):
                if f.name == "seed" and isinstance(obj, SamplingParams):
                    continue  # per-request seeds are derived, never configured
                lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep key case
        try:
            parser.read_string(text)
        except configparser.Error as err:
            raise ConfigInvalid(str(err)) from err
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(parser.sections()) - set(known)
        if unknown:
            raise ConfigInvalid(f"unknown sections {sorted(unknown)}")
        default = cls()
        sections = {}
        for name in known:
            base = getattr(default, name)
            if not parser.has_section(name):
                continue
            types = {f.name: type(getattr(base, f.name)) for f in dataclasses.fields(base)}
            values = {}
            for key, raw in parser.items(name):
                if key not in types:
                    raise ConfigInvalid(f"unknown key {name}.{key}")
                values[key] = _parse(raw, types[key], f"{name}.{key}")
            try:
                sections[name] = dataclasses.replace(base, **values)
            except (ValueError, TypeError) as err:
                raise ConfigInvalid(f"[{name}] {err}") from err
        return dataclasses.replace(default, **sections)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ini())

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_ini(Path(path).read_text())


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, kind: type, where: str):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered not in ("true", "false"):
                raise ValueError(raw)
            return lowered == "true"
        if issubclass(kind, Enum):
            return kind(raw.strip())
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError as err:
        raise ConfigInvalid(f"{where}: cannot read {raw!r} as {kind.__name__}") from err
