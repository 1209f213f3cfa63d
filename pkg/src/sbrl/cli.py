"""Command-line entry point (``sbrl``)."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiment
from .dsl import ParseError, ScenarioSource, check, parse_scenarios
from .engine import POLICIES, Execution, Priority, StepBudgetExceeded, write_trace_csv
from .netsim import InvalidConfig
from .trainer import QTable, fmt

log = logging.getLogger("sbrl")


def _policy(name: str, priorities: list[str]):
    if name != "priority":
        return POLICIES[name]()
    table = {}
    for item in priorities:
        event, eq, value = item.partition("=")
        if not eq:
            raise SystemExit(f"--priority expects EVENT=N, got {item!r}")
        table[event.strip()] = int(value)
    return Priority(table)


def cmd_run_model(args: argparse.Namespace) -> int:
    programs = []
    failed = False
    for path in args.models:
        try:
            src = ScenarioSource.from_file(path)
        except OSError as exc:
            print(f"{path}: {exc.strerror}", file=sys.stderr)
            failed = True
            continue
        try:
            programs.extend(parse_scenarios(src))
        except ParseError as exc:
            for d in exc.diagnostics:
                print(d.format(src.origin), file=sys.stderr)
            failed = True
            continue
        for d in check(src):
            print(d.format(src.origin), file=sys.stderr)
    if failed:
        return 1

    policy = _policy(args.policy, args.priority)
    execution = Execution(programs, seed=args.seed)
    fired = []
    try:
        fired += execution.run_to_completion(policy, args.max_steps)
        for event in args.inject:
            execution.advance(event)
            fired += execution.run_to_completion(policy, args.max_steps)
    except StepBudgetExceeded as exc:
        fired += exc.events
        for e in fired:
            print(e)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for e in fired:
        print(e)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fp:
            write_trace_csv(execution.records, fp)
    return 0


def _load(args: argparse.Namespace) -> experiment.ExperimentConfig:
    cfg = experiment.load_config(args.config) if args.config else experiment.ExperimentConfig()
    overrides = {}
    if args.seed:
        overrides["training__seeds"] = tuple(args.seed)
    if args.out:
        overrides["output__dir"] = args.out
    if getattr(args, "policy", None):
        overrides["scenario__policy"] = args.policy
    if getattr(args, "episodes", None):
        overrides["training__episodes"] = args.episodes
    if overrides:
        cfg = cfg.replace(**overrides)
    experiment.validate(cfg)
    return cfg


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out = Path(cfg.output.dir)
    experiment.train_mode(cfg, args.mode, out)
    print((out / "summary.csv").read_text(encoding="utf-8"), end="")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _load(args)
    report = experiment.compare(cfg, Path(cfg.output.dir))
    print(report.to_csv(), end="")
    print(report.verdict_text(), end="")
    return report.exit_code


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out = Path(cfg.output.dir)
    t = cfg.training
    print("seed,mean_reward,mean_candidate_reward,violation_frequency,blocked")
    for seed in t.seeds:
        path = out / f"qtable_{args.mode}_seed{seed}.npy"
        if not path.exists():
            print(f"error: {path} not found; run 'sbrl train --mode {args.mode}' first", file=sys.stderr)
            return 1
        q = QTable.load(path, learning_rate=t.learning_rate, gamma=t.gamma)
        elog = experiment.run_evaluation(cfg, q, args.mode, seed)
        elog.write_csv(out / f"eval_{args.mode}_seed{seed}.csv")
        n = len(elog.episodes)
        print(
            ",".join([
                str(seed),
                fmt(sum(e.total_reward for e in elog.episodes) / n),
                fmt(sum(e.total_candidate_reward for e in elog.episodes) / n),
                fmt(elog.violation_frequency(n)),
                str(sum(e.blocked_count for e in elog.episodes)),
            ])
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbrl", description="Scenario-based reward shaping toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-model", help="execute .sbs scenario models and print the event trace")
    p.add_argument("models", nargs="*", help=".sbs files")
    p.add_argument("--inject", action="append", default=[], metavar="EVENT", help="external event, repeatable")
    p.add_argument("--policy", choices=sorted(POLICIES), default="first")
    p.add_argument("--priority", action="append", default=[], metavar="EVENT=N")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--csv", help="also write step,event,policy,enabled_count records here")
    p.set_defaults(func=cmd_run_model)

    for name, func, helptext in (
        ("train", cmd_train, "train agents, one CSV log per seed"),
        ("compare", cmd_compare, "train baseline and shaped agents and compare them"),
        ("eval", cmd_eval, "evaluate saved Q-tables greedily"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="key=value experiment config file")
        p.add_argument("--seed", type=int, action="append", default=[], help="repeatable; overrides training.seeds")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--policy", choices=sorted(POLICIES), default=None, help="event selection policy for the model")
        p.add_argument("--episodes", type=int, default=None, help="overrides training.episodes")
        if name != "compare":
            p.add_argument("--mode", choices=experiment.MODES, default="shaped")
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except InvalidConfig as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
