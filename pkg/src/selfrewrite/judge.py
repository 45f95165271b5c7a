"""LLM-as-a-judge scoring of reasoning passages on four flaw aspects."""

from __future__ import annotations

import hashlib
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Mapping, Protocol, Sequence

from .backends.base import SamplingParams
from .backends.http import ChatEndpoint
from .errors import EmptyInput, MalformedAfterRetries, MalformedResponse, OutOfRange
from .prompts import judge_prompt

log = logging.getLogger(__name__)

LABELS = ("Aspect 1", "Aspect 2", "Aspect 3", "Aspect 4", "Overall")
FIELDS = ("over_thinking", "under_thinking", "disordered_thinking", "redundant_thinking", "overall")
SCALE = 20.0  # mean on 1..5 -> 0..100
PASSAGE_MARKER = "### Thinking Passage to Judge\n"
DEFAULT_JUDGE_PARAMS = SamplingParams(temperature=0.6, top_p=0.95, max_new_tokens=64)

_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class JudgeScorecard:
    over_thinking: int
    under_thinking: int
    disordered_thinking: int
    redundant_thinking: int
    overall: int

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= 5:
                raise OutOfRange(f"{f.name}={value!r} is not an integer in [1, 5]")

    def scores(self) -> tuple[int, ...]:
        return tuple(getattr(self, f) for f in FIELDS)

    def render(self) -> str:
        body = "\n".join(f"{label}: {v}" for label, v in zip(LABELS, self.scores()))
        return f"```\n{body}\n```"


@dataclass(frozen=True)
class AggregateScore:
    means: dict[str, float]
    scaled: dict[str, float]
    count: int

    @property
    def headline(self) -> float:
        return self.scaled["overall"]


def build_judge_prompt(passage: str) -> str:
    if not passage or not passage.strip():
        raise ValueError("passage must be non-empty")
    return judge_prompt(passage)


def _parse_block(text: str) -> JudgeScorecard:
    values = []
    for label in LABELS:
        found = re.findall(rf"^[\s*]*{label}[\s*]*:[\s*]*(\S+)", text, flags=re.MULTILINE)
        if not found:
            raise MalformedResponse(f"missing '{label}:' line")
        token = found[-1].strip("*[]().,")
        if not re.fullmatch(r"\d", token):
            raise MalformedResponse(f"{label} value {found[-1]!r} is not a single digit")
        values.append(int(token))
    return JudgeScorecard(*values)


def parse_judgment(text: str) -> JudgeScorecard:
    """Read the five labeled scores from the last fenced block, else the whole text."""
    blocks = _FENCE_RE.findall(text)
    if blocks:
        try:
            return _parse_block(blocks[-1])
        except OutOfRange:
            raise
        except MalformedResponse:
            pass
    return _parse_block(text)


def aggregate(cards: Sequence[JudgeScorecard]) -> AggregateScore:
    if not cards:
        raise EmptyInput("no scorecards to aggregate")
    n = len(cards)
    # fixed-order fold keeps results independent of thread scheduling
    means = {f: sum(getattr(c, f) for c in cards) / n for f in FIELDS}
    return AggregateScore(means, {f: m * SCALE for f, m in means.items()}, n)


class JudgeBackend(Protocol):
    def complete(self, prompt: str) -> str: ...


def _passage_of(prompt: str) -> str:
    return prompt.split(PASSAGE_MARKER, 1)[-1]


class MockJudge:
    """Deterministic scores keyed on a hash of the judged passage.

    ``script`` lists raw replies to return first (one per call), which lets
    tests drive the malformed-response retry path.
    """

    def __init__(self, script: Iterable[str] = ()):
        self.script = list(script)
        self.calls = 0

    def complete(self, prompt: str) -> str:
        self.calls += 1
        if self.script:
            return self.script.pop(0)
        digest = hashlib.sha256(_passage_of(prompt).encode()).digest()
        return JudgeScorecard(*(1 + b % 5 for b in digest[:5])).render()


class HeuristicJudge:
    """Rule-based stand-in that rewards short, non-repetitive passages.

    Redundancy is the share of tokens that repeat their predecessor; length
    pressure counts tokens beyond ``budget``.
    """

    def __init__(self, budget: int = 8):
        self.budget = budget

    def complete(self, prompt: str) -> str:
        toks = _passage_of(prompt).split()
        if not toks:
            return JudgeScorecard(1, 1, 1, 1, 1).render()
        repeats = sum(a == b for a, b in zip(toks, toks[1:])) / len(toks)
        excess = max(0, len(toks) - self.budget) / max(len(toks), 1)
        redundant = 5 - round(4 * repeats)
        over = 5 - round(4 * excess)
        kinds = len(set(toks)) / len(toks)
        disordered = 5 - round(2 * (1 - kinds) * repeats)
        under = 5 if len(toks) >= 1 else 1
        overall = max(1, min(5, round((redundant + over + disordered + under) / 4)))
        return JudgeScorecard(over, under, disordered, redundant, overall).render()


class ChatJudge:
    def __init__(self, endpoint: ChatEndpoint, params: SamplingParams = DEFAULT_JUDGE_PARAMS):
        self.endpoint = endpoint
        self.params = params

    def complete(self, prompt: str) -> str:
        return self.endpoint.complete([{"role": "user", "content": prompt}], self.params).content


def judge_passage(passage: str, endpoint: JudgeBackend, retries: int = 2) -> JudgeScorecard:
    """Build, send and parse; malformed replies are retried ``retries`` times."""
    prompt = build_judge_prompt(passage)
    raw = ""
    for attempt in range(retries + 1):
        raw = endpoint.complete(prompt)
        try:
            return parse_judgment(raw)
        except MalformedResponse as err:
            log.warning("malformed judge reply (attempt %d): %s", attempt + 1, err)
    raise MalformedAfterRetries(f"no valid judgment after {retries + 1} attempts", raw)


def digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class JudgeRecord:
    passage_id: str
    over_thinking: int
    under_thinking: int
    disordered_thinking: int
    redundant_thinking: int
    overall: int
    raw_response_digest: str

    @property
    def card(self) -> JudgeScorecard:
        return JudgeScorecard(*(getattr(self, f) for f in FIELDS))

    def to_dict(self) -> dict:
        return asdict(self)


class _Recording:
    def __init__(self, inner: JudgeBackend):
        self.inner = inner
        self.last = ""

    def complete(self, prompt: str) -> str:
        self.last = self.inner.complete(prompt)
        return self.last


def judge_passages(
    passages: Mapping[str, str], endpoint: JudgeBackend, retries: int = 2, max_workers: int = 1
) -> list[JudgeRecord]:
    """Judge every passage; records come back in input order."""

    def one(item: tuple[str, str]) -> JudgeRecord:
        pid, text = item
        rec = _Recording(endpoint)
        card = judge_passage(text, rec, retries)
        return JudgeRecord(pid, *card.scores(), digest(rec.last))

    items = list(passages.items())
    if max_workers <= 1:
        return [one(it) for it in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(one, items))
