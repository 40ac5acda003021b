"""Command line entry point: ``greenlaunch <subcommand> ...``.

Exit codes: 0 success, 1 usage or input error, 2 experiment finished with
failed cells.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import dataset as ds_mod
from .agents import FILTERS, AgentConfig, load_policy, save_policy, train_offline, train_online
from .config import load_agent_config, load_sim_config
from .container import ContainerError
from .evaluation import action_agreement, evaluate
from .experiments import load_spec, parse_recipe, run_experiment
from .heuristics import HEURISTICS
from .sim import ConfigError, GreenDatacenterEnv, SimConfig

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2
ALGOS = ("bc", "offline", "online", "offline-online")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sim_config(args) -> SimConfig:
    cfg = load_sim_config(args.config) if args.config else SimConfig()
    if args.resources is not None:
        cfg = cfg.replace(R_max=args.resources)
    return cfg


def _agent_config(args) -> AgentConfig:
    base = AgentConfig(lr=1e-3)
    return load_agent_config(args.config, base) if args.config else base


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file with [sim] / [agent] sections")
    p.add_argument("--resources", type=int, help="override R_max")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="greenlaunch", description="Green datacenter scheduling with offline and online RL.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate-data", help="record heuristic rollouts into a dataset file")
    _common(g)
    g.add_argument("--policy", default="qos",
                   help="heuristic (sjf|fcfs|qos|hvf), random, a recipe such as combo, or qos:0.5+sjf:0.5")
    g.add_argument("--rollouts", type=int, default=20)
    g.add_argument("--steps", type=int, default=1000)
    g.add_argument("--size", type=int, default=0, help="transitions in a mixed dataset (default rollouts*steps)")
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train an agent and write a checkpoint")
    _common(t)
    t.add_argument("--algo", choices=ALGOS, required=True)
    t.add_argument("--filter", choices=FILTERS, default=None)
    t.add_argument("--data", help="dataset file (needed for bc, offline, offline-online)")
    t.add_argument("--steps", type=int, help="offline (or online, for --algo online) gradient steps")
    t.add_argument("--online-steps", type=int)
    t.add_argument("--episode-len", type=int, default=1000)
    t.add_argument("--telemetry", help="CSV file for training telemetry")
    t.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="total job value of a checkpoint or heuristic")
    _common(e)
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--policy", help="heuristic name, random or noop")
    e.add_argument("--rollouts", type=int, default=10)
    e.add_argument("--steps", type=int, default=2000)
    e.add_argument("--json", help="write the report as JSON here")

    a = sub.add_parser("agreement", help="action agreement of a checkpoint with a heuristic")
    _common(a)
    asrc = a.add_mutually_exclusive_group(required=True)
    asrc.add_argument("--checkpoint")
    asrc.add_argument("--policy", help="heuristic name, random or noop")
    a.add_argument("--heuristic", choices=[h.value for h in HEURISTICS], default="qos")
    a.add_argument("--rollouts", type=int, default=10)
    a.add_argument("--steps", type=int, default=2000)

    x = sub.add_parser("experiment", help="run an experiment suite from a spec file")
    x.add_argument("--spec", required=True)
    x.add_argument("--out", help="override output_dir")
    x.add_argument("--paper-scale", action="store_true", help="full-size budgets and 100 resources")
    return parser


def cmd_generate(args) -> int:
    cfg = _sim_config(args)
    recipe = parse_recipe(args.policy)
    if len(recipe) == 1:
        data = ds_mod.collect_rollouts(next(iter(recipe)), cfg, args.rollouts, args.steps, seed=args.seed)
    else:
        parts = [(ds_mod.collect_rollouts(h, cfg, args.rollouts, args.steps, seed=args.seed * 1000 + i), f)
                 for i, (h, f) in enumerate(recipe.items())]
        data = ds_mod.mix_datasets(parts, args.size or args.rollouts * args.steps, seed=args.seed)
    ds_mod.save(data, args.out)
    print(f"wrote {len(data)} transitions to {args.out} ({data.tag_counts()})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _sim_config(args)
    acfg = _agent_config(args).replace(seed=args.seed)
    if args.filter:
        acfg = acfg.replace(filter=args.filter)
    data = None
    if args.algo != "online":
        if not args.data:
            raise UsageError(f"--algo {args.algo} needs --data")
        data = ds_mod.load(args.data, expected_config_hash=cfg.config_hash())
        if tuple(data.image_shape) != (cfg.T_horizon, cfg.R_max):
            raise UsageError(f"dataset image shape {data.image_shape} does not match config "
                             f"{(cfg.T_horizon, cfg.R_max)}; pass the matching --resources/--config")
    env = GreenDatacenterEnv(cfg.replace(episode_len=args.episode_len))
    if args.algo == "bc":
        acfg = acfg.replace(filter="uniform", train_critic=False)
    if args.steps is not None:
        acfg = acfg.replace(online_steps=args.steps) if args.algo == "online" else acfg.replace(offline_steps=args.steps)
    if args.online_steps is not None:
        acfg = acfg.replace(online_steps=args.online_steps)
    if args.algo in ("bc", "offline"):
        policy = train_offline(data, acfg, n_actions=cfg.n_actions, telemetry_path=args.telemetry)
        policy.name = args.algo
    elif args.algo == "online":
        policy = train_online(env, acfg, telemetry_path=args.telemetry)
    else:
        pre = train_offline(data, acfg, n_actions=cfg.n_actions)
        policy = train_online(env, acfg, warm_start=(pre, data), telemetry_path=args.telemetry)
    save_policy(policy, args.out, {"algo": args.algo, "sim": cfg.to_dict(), "agent": acfg.to_dict()})
    print(f"wrote checkpoint {args.out}")
    return EXIT_OK


def _policy_from_args(args, cfg: SimConfig):
    if args.checkpoint:
        return load_policy(args.checkpoint, (cfg.T_horizon, cfg.R_max), None, cfg.n_actions)
    return args.policy


def cmd_evaluate(args) -> int:
    cfg = _sim_config(args)
    rep = evaluate(_policy_from_args(args, cfg), cfg, args.rollouts, args.steps, args.seed)
    print(f"total job value: {rep.mean_value:.2f} +/- {rep.ci95:.2f} (95% CI, {len(rep.values)} rollouts)")
    if args.json:
        Path(args.json).write_text(json.dumps(rep.as_dict(), indent=2))
    return EXIT_OK


def cmd_agreement(args) -> int:
    cfg = _sim_config(args)
    frac = action_agreement(_policy_from_args(args, cfg), args.heuristic, cfg, args.rollouts, args.steps, args.seed)
    print(f"action agreement with {args.heuristic}: {frac:.4f}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    spec = load_spec(args.spec)
    if args.paper_scale:
        spec = spec.paper_scale()
    if args.out:
        spec.output_dir = args.out
    result = run_experiment(spec)
    print(f"wrote {result.csv_path} ({len(result.rows)} rows)")
    for f in result.failures:
        print(f"FAILED cell agent={f['agent']} resources={f['resources']} seed={f['seed']}: "
              f"{f['error'].splitlines()[0]}", file=sys.stderr)
    return EXIT_OK if result.complete else EXIT_PARTIAL


COMMANDS = {
    "generate-data": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "agreement": cmd_agreement,
    "experiment": cmd_experiment,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, ContainerError, FileNotFoundError, ValueError) as exc:
        print(f"greenlaunch {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
