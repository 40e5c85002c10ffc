"""Command line entry point: ``mg-equilib {run,eval,oracle-check,gen-env}``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .envs import env_from_dict, random_congestion, random_game, two_facility_congestion
from .game import MixtureMarkovPolicy, TabularMarkovGame
from .harness import (EXACT_EVAL, ConfigError, ExperimentConfig, canonical, evaluation_report, resolve_threads,
                      run_experiment)
from .suites import SUITES, run_suite


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 2


def cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seeds=[args.seed])
        if args.out is not None:
            cfg = replace(cfg, out=args.out)
        if args.exact_eval is not None:
            cfg = replace(cfg, exact_eval=args.exact_eval)
        cfg.validate()
        threads = resolve_threads(args.threads)
    except ConfigError as exc:
        return _fail(str(exc))
    outcome = run_experiment(cfg, threads)
    for cell in outcome.cells:
        row = cell.summary
        print(f"seed {row['seed']}: episodes={row['episodes']} trajectories={row['trajectories']} "
              f"certified={row['certified_bound'] or '-'} cce={row['exact_cce_gap'] or '-'} "
              f"ce={row['exact_ce_gap'] or '-'}")
    if not outcome.ok:
        for seed, err in sorted(outcome.failures.items()):
            print(f"error: seed {seed} failed: {err}", file=sys.stderr)
        print(f"partial results in {cfg.out} (see PARTIAL)", file=sys.stderr)
        return 1
    print(f"summary: {outcome.summary_path}")
    return 0


def load_game(path: str | Path) -> TabularMarkovGame:
    """A serialized game or an environment document."""
    doc = json.loads(Path(path).read_text())
    if "family" in doc:
        return env_from_dict(doc).game
    return TabularMarkovGame.from_dict(doc)


def cmd_eval(args) -> int:
    try:
        game = load_game(args.game)
        policy = MixtureMarkovPolicy.from_dict(json.loads(Path(args.policy).read_text()))
        report = evaluation_report(game, policy)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(str(exc))
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_oracle_check(args) -> int:
    try:
        rep = run_suite(args.suite, args.seeds)
    except ValueError as exc:
        return _fail(str(exc))
    for line in rep.lines:
        print(f"  {line}")
    print(f"{rep.name}: {'PASS' if rep.passed else 'FAIL'} ({rep.seconds:.1f} s)")
    if args.out:
        Path(args.out).write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0 if rep.passed else 1


def cmd_gen_env(args) -> int:
    try:
        if args.family == "random":
            game = random_game(args.seed, args.states, args.actions, args.horizon, kind=args.kind, noise=args.noise)
            doc = {"family": "game", "potential": args.kind == "cooperative", "game": game.to_dict()}
        elif args.family == "congestion":
            doc = random_congestion(args.seed, args.players, args.facilities, not args.subsets, args.noise).to_dict()
        else:
            doc = two_facility_congestion(args.noise).to_dict()
        env_from_dict(doc)  # round-trip check
    except ValueError as exc:
        return _fail(str(exc))
    text = canonical(doc) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mg-equilib", description="Equilibrium learning in Markov games")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, help="run only this seed")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--threads", type=int, help="worker processes for seed cells (default: MG_EQUILIB_THREADS or 1)")
    r.add_argument("--exact-eval", nargs="?", const="final", choices=EXACT_EVAL,
                   help="exact gap evaluation: off, final (default when given bare) or episode")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="exact gap report of a policy")
    e.add_argument("game", help="game or environment JSON")
    e.add_argument("policy", help="policy JSON")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("oracle-check", help="empirical regret and regression suites")
    o.add_argument("suite", choices=SUITES)
    o.add_argument("--seeds", type=int, help="seed count for the statistical suites (default 50)")
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle_check)

    g = sub.add_parser("gen-env", help="write a random game or congestion preset")
    g.add_argument("family", choices=("random", "congestion", "two-facility"))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.add_argument("--states", type=int, default=2)
    g.add_argument("--actions", type=int, nargs="+", default=[2, 2])
    g.add_argument("--horizon", type=int, default=2)
    g.add_argument("--kind", default="general", choices=("general", "zero_sum", "cooperative"))
    g.add_argument("--players", type=int, default=2)
    g.add_argument("--facilities", type=int, default=2)
    g.add_argument("--subsets", action="store_true", help="all nonempty facility subsets instead of singletons")
    g.add_argument("--noise", default="bernoulli", choices=("bernoulli", "deterministic"))
    g.set_defaults(func=cmd_gen_env)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
