"""Command-line entry points: train, evaluate, judge, analyze, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, TaskSource
from .errors import BackendError, ConfigInvalid, MalformedAfterRetries, MissingInputs
from .evaluation import evaluate, load_policy, make_judge, write_evaluation
from .judge import judge_passages
from .trainer import read_jsonl, train


def _cmd_train(args) -> int:
    config = RunConfig.load(args.config)
    if args.output:
        config = config.replace(run={"output_dir": args.output})
    run_dir = train(config)
    print(run_dir)
    return 0


def _eval_dir(checkpoint: Path, output: str | None) -> Path:
    if output:
        return Path(output)
    if checkpoint.parent.name == "checkpoints":
        return checkpoint.parent.parent / "eval" / checkpoint.name
    return checkpoint / "eval"


def _run_config_near(checkpoint: Path) -> RunConfig | None:
    candidate = checkpoint.parent.parent / "config.ini"
    return RunConfig.load(candidate) if candidate.exists() else None


def _cmd_evaluate(args) -> int:
    checkpoint = Path(args.checkpoint)
    config = RunConfig.load(args.config) if args.config else _run_config_near(checkpoint) or RunConfig()
    tasks = TaskSource.parse(args.tasks).load()
    judge = None if args.no_judge else make_judge(config.judge, config.judge_sampling)
    result = evaluate(
        load_policy(checkpoint), tasks, args.runs, config.test, seed=args.seed, judge=judge,
        judge_retries=config.judge.retries, judge_fraction=config.judge.fraction,
        judge_seed=config.judge.seed, judge_workers=config.judge.max_workers,
    )
    out = write_evaluation(result, _eval_dir(checkpoint, args.output))
    print(json.dumps(result.summary(), indent=1, sort_keys=True))
    print(out)
    return 0


def _cmd_judge(args) -> int:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    judge_cfg, sampling = config.judge, config.judge_sampling
    records = read_jsonl(Path(args.input))
    passages = {}
    for i, rec in enumerate(records):
        text = rec.get("reasoning_text", rec.get("text", ""))
        if text.strip():
            passages[str(rec.get("passage_id", rec.get("task_id", i)))] = text
    results = judge_passages(passages, make_judge(judge_cfg, sampling), judge_cfg.retries, judge_cfg.max_workers)
    out = Path(args.output) if args.output else Path(args.input).with_suffix(".judged.jsonl")
    out.write_text("".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in results))
    print(out)
    return 0


def _cmd_analyze(args) -> int:
    from .analysis import analyze

    print(json.dumps(analyze(args.run, args.max_step, args.pairing), indent=1, sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    from .analysis import report

    for name, path in report(args.run, args.reference, args.output).items():
        print(f"{name}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfrewrite", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train or resume a run")
    p.add_argument("--config", required=True)
    p.add_argument("--output", help="override run.output_dir")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="pass@1, length and judge scores of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tasks", required=True, help="task JSONL file or synthetic:seed=..,count=..,difficulty=..,modulus=..")
    p.add_argument("--runs", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="run config (defaults to the one beside the checkpoint)")
    p.add_argument("--output")
    p.add_argument("--no-judge", action="store_true")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("judge", help="score reasoning passages from a JSONL file")
    p.add_argument("--input", required=True)
    p.add_argument("--config")
    p.add_argument("--output")
    p.set_defaults(func=_cmd_judge)

    p = sub.add_parser("analyze", help="length-ratio distribution and training curves")
    p.add_argument("--run", required=True)
    p.add_argument("--max-step", type=int)
    p.add_argument("--pairing", choices=("group_mean", "source"), default="group_mean")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("report", help="comparison tables against a reference run")
    p.add_argument("--run", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--output")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigInvalid, MissingInputs, BackendError, MalformedAfterRetries, FileNotFoundError) as err:
        print(f"selfrewrite {args.command}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
