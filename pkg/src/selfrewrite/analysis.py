"""Length-ratio analysis, Gaussian KDE summaries and comparison tables."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import EmptyInput, MissingInputs
from .evaluation import read_summary
from .judge import FIELDS
from .rollout import GroupRollout
from .trainer import read_jsonl

log = logging.getLogger(__name__)

Pairing = Literal["group_mean", "source"]
GRID_POINTS = 512
GRID_BANDWIDTHS = 4.0


# ------------------------------------------------------------ length ratios


def _group_ratios(first_half: Sequence[float], rewritten: Sequence[tuple[float, int | None]],
                  pairing: Pairing, where: str) -> list[float]:
    if not rewritten:
        return []
    if pairing == "group_mean":
        den = float(np.mean(first_half))
        if den == 0:
            log.warning("%s: first-half mean length is 0; group skipped", where)
            return []
        return [n / den for n, _ in rewritten]
    out = []
    for n, source in rewritten:
        den = float(first_half[source - 1])
        if den == 0:
            log.warning("%s: source sample %d has length 0; skipped", where, source)
            continue
        out.append(n / den)
    return out


def length_ratios(rollouts: Sequence[GroupRollout], pairing: Pairing = "group_mean") -> list[float]:
    """Rewritten reasoning length over the first-half mean (or over its own source)."""
    out = []
    for g in rollouts:
        half = g.group_size // 2
        first = [s.reasoning_tokens for s in g.samples[:half]]
        rewritten = [(s.reasoning_tokens, s.source_index) for s in g.samples[half:] if s.rewritten]
        out.extend(_group_ratios(first, rewritten, pairing, g.task.task_id))
    return out


def ratios_from_records(records: Sequence[dict], pairing: Pairing = "group_mean",
                        max_step: int | None = None) -> list[float]:
    """Same as :func:`length_ratios` over the trainer's ``rollouts.jsonl`` records."""
    out = []
    for rec in records:
        if max_step is not None and rec["step"] > max_step:
            continue
        for g in rec["groups"]:
            half = len(g["samples"]) // 2
            first = [s["reasoning_tokens"] for s in g["samples"][:half]]
            rewritten = [(s["reasoning_tokens"], s["source_index"]) for s in g["samples"][half:]
                         if s["provenance"] == "rewritten"]
            out.extend(_group_ratios(first, rewritten, pairing, f"step {rec['step']} {g['task_id']}"))
    return out


# ------------------------------------------------------------ KDE


@dataclass(frozen=True)
class DistributionSummary:
    count: int
    median: float
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float


def silverman_bandwidth(x: np.ndarray) -> float:
    """0.9 * min(std, IQR / 1.34) * n^(-1/5); degenerate spreads fall back to 1."""
    q75, q25 = np.percentile(x, [75, 25])
    spreads = [s for s in (float(np.std(x, ddof=1)) if len(x) > 1 else 0.0, (q75 - q25) / 1.34) if s > 0]
    return 0.9 * (min(spreads) if spreads else 1.0) * len(x) ** -0.2


def kde_summary(samples: Sequence[float], grid_points: int = GRID_POINTS) -> DistributionSummary:
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise EmptyInput("no samples for the density estimate")
    h = silverman_bandwidth(x)
    grid = np.linspace(x.min() - GRID_BANDWIDTHS * h, x.max() + GRID_BANDWIDTHS * h, grid_points)
    z = (grid[:, None] - x[None, :]) / h
    density = np.exp(-0.5 * z * z).sum(axis=1) / (x.size * h * np.sqrt(2 * np.pi))
    return DistributionSummary(int(x.size), float(np.median(x)), grid, density, float(h))


def write_curve(path: Path, grid: np.ndarray, density: np.ndarray) -> None:
    path.write_text("".join(f"{a!r} {b!r}\n" for a, b in zip(grid.tolist(), density.tolist())))


# ------------------------------------------------------------ analyze


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def training_curves(records: Sequence[dict]) -> list[list]:
    rows = []
    for r in records:
        rewards = np.concatenate([np.asarray(x) for x in r["raw_rewards"]])
        gated = np.mean([d == "rewrite" for d in r["gate_decisions"]])
        n_groups = len(r["gate_decisions"])
        rows.append([r["step"], float(rewards.mean()), float(gated),
                     r["reasoning_tokens"]["vanilla"], r["reasoning_tokens"]["rewritten"],
                     n_groups, r["objective"], r["grad_norm"]])
    return rows


def analyze(run_dir: str | Path, max_step: int | None = None, pairing: Pairing = "group_mean") -> dict:
    """Length-ratio distribution and training curves of a run, written to ``analysis/``."""
    run_dir = Path(run_dir)
    rollouts, steps = run_dir / "rollouts.jsonl", run_dir / "steps.jsonl"
    if not rollouts.exists() or not steps.exists():
        raise MissingInputs(f"{run_dir} has no training logs")
    out = run_dir / "analysis"
    out.mkdir(exist_ok=True)
    step_records = read_jsonl(steps)
    _write_csv(out / "training_curves.csv",
               ["step", "mean_raw_reward", "gated_fraction", "vanilla_reasoning_tokens",
                "rewritten_reasoning_tokens", "groups", "objective", "grad_norm"],
               training_curves(step_records))
    ratios = ratios_from_records(read_jsonl(rollouts), pairing, max_step)
    (out / "length_ratios.txt").write_text("".join(f"{r!r}\n" for r in ratios))
    result = {"ratios": len(ratios), "median": None, "bandwidth": None}
    if ratios:
        summary = kde_summary(ratios)
        write_curve(out / "length_ratio_kde.txt", summary.grid, summary.density)
        result.update(median=summary.median, bandwidth=summary.bandwidth,
                      longer_fraction=float(np.mean(np.asarray(ratios) > 1)))
        _write_csv(out / "length_ratio_summary.csv", ["count", "median", "bandwidth", "longer_fraction", "pairing"],
                   [[summary.count, summary.median, summary.bandwidth, result["longer_fraction"], pairing]])
    else:
        log.warning("%s: no rewritten samples, no length-ratio distribution", run_dir)
    return result


# ------------------------------------------------------------ report


def format_point_delta(current: float, reference: float) -> str:
    d = round(current - reference, 1)
    return f"{d + 0.0:+.1f}"  # adding 0.0 folds -0.0 into +0.0


def format_percent_delta(current: float, reference: float) -> str:
    if reference == 0:
        return "n/a"
    return f"{round((current - reference) / reference * 100) + 0:+d}%"


def find_summary(path: str | Path) -> Path:
    """An evaluation directory, or the last evaluation under ``<run>/eval/``."""
    path = Path(path)
    if (path / "summary.json").exists():
        return path
    found = sorted(p.parent for p in (path / "eval").glob("*/summary.json"))
    if not found:
        raise MissingInputs(f"no evaluation outputs under {path}")
    return found[-1]


def _judge_scaled(summary: dict) -> dict | None:
    return summary["judge"]["scaled"] if summary.get("judge") else None


def report(run: str | Path, reference: str | Path, output: str | Path | None = None) -> dict[str, Path]:
    """Comparison tables of ``run`` against ``reference`` plus the KDE curve."""
    run, reference = Path(run), Path(reference)
    cur_dir, ref_dir = find_summary(run), find_summary(reference)
    cur, ref = read_summary(cur_dir), read_summary(ref_dir)
    out = Path(output) if output else (run if (run / "eval").exists() else cur_dir) / "analysis"
    out.mkdir(parents=True, exist_ok=True)

    def row(name: str, s: dict) -> list:
        acc, length = 100 * s["accuracy"], s["mean_reasoning_tokens"]
        ref_acc, ref_len = 100 * ref["accuracy"], ref["mean_reasoning_tokens"]
        judge, ref_judge = _judge_scaled(s), _judge_scaled(ref)
        j = f"{judge['overall']:.1f}" if judge else ""
        jd = format_point_delta(judge["overall"], ref_judge["overall"]) if judge and ref_judge else ""
        return [name, f"{acc:.1f}", format_point_delta(acc, ref_acc), f"{length:.1f}",
                format_percent_delta(length, ref_len), j, jd]

    paths = {"main": out / "table_main.csv"}
    _write_csv(paths["main"], ["name", "accuracy", "accuracy_delta", "length", "length_delta", "judge", "judge_delta"],
               [row(f"reference:{ref_dir.name}", ref), row(f"run:{cur_dir.name}", cur)])
    cur_j, ref_j = _judge_scaled(cur), _judge_scaled(ref)
    if cur_j and ref_j:
        paths["judge"] = out / "table_judge.csv"
        _write_csv(paths["judge"], ["name", *FIELDS], [
            [f"reference:{ref_dir.name}", *(f"{ref_j[f]:.1f}" for f in FIELDS)],
            [f"run:{cur_dir.name}", *(f"{cur_j[f]:.1f}" for f in FIELDS)],
            ["delta", *(format_point_delta(cur_j[f], ref_j[f]) for f in FIELDS)],
        ])
    if (run / "rollouts.jsonl").exists():
        ratios = ratios_from_records(read_jsonl(run / "rollouts.jsonl"))
        if ratios:
            summary = kde_summary(ratios)
            paths["kde"] = out / "length_ratio_kde.txt"
            write_curve(paths["kde"], summary.grid, summary.density)
    return paths
