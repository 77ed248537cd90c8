"""Command-line entry point: seeded episode runs, training, evaluation
suites, and the repulsion-field figure. Every command's outputs are
byte-reproducible from (config, seed)."""
from __future__ import annotations

import argparse
import json
import os
import sys

from .env import Env, EnvConfig
from .metrics import grid_for_log, write_csv
from .policies import PlannerPolicy, PolicySpecError, parse_policy
from .rendering import trajectory_svg, zeta_field_data, zeta_field_svg
from .suites import BUILTIN_SUITES, run_episode, run_suite


def _load_json(path):
    with open(path) as f:
        return json.load(f)


def _write_manifest(out_dir, doc):
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))


def _sanitize(spec: str) -> str:
    return spec.replace(":", "-").replace("/", "_").replace("=", "-").replace(",", "_")


def cmd_run_episode(args) -> int:
    cfg = EnvConfig(task="insight")
    if args.config:
        cfg = EnvConfig.from_dict(_load_json(args.config))
    try:
        policy = parse_policy(args.policy)
    except PolicySpecError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    env, policy = run_episode(cfg, policy, args.seed)
    files = ["episode.jsonl"]
    env.log.save(os.path.join(args.out, "episode.jsonl"))
    if args.render == "svg":
        with open(os.path.join(args.out, "trajectory.svg"), "w") as f:
            f.write(trajectory_svg(env.log, grid_for_log(env.log)))
        files.append("trajectory.svg")
    if isinstance(policy, PlannerPolicy) and policy.decisions:
        with open(os.path.join(args.out, "planner_decisions.json"), "w") as f:
            json.dump(policy.decisions, f, sort_keys=True, separators=(",", ":"))
        files.append("planner_decisions.json")
    _write_manifest(
        args.out,
        {
            "version": 1,
            "command": "run-episode",
            "policy": args.policy,
            "seed": args.seed,
            "config": cfg.to_dict(),
            "files": sorted(files),
        },
    )
    return 0


def cmd_train(args) -> int:
    # torch import deferred: only the train command needs it
    from .learner import TrainConfig, train

    doc = _load_json(args.config) if args.config else {}
    env_cfg = EnvConfig.from_dict(doc["env"]) if "env" in doc else EnvConfig(task="random")
    train_cfg = TrainConfig.from_dict(doc["train"]) if "train" in doc else TrainConfig()
    os.makedirs(args.out, exist_ok=True)
    out = train(
        lambda: Env(env_cfg),
        train_cfg,
        out_dir=args.out,
        resume_from=args.resume,
        save_state=args.save_state,
    )
    write_csv(
        os.path.join(args.out, "loss.csv"),
        [{"step": s, "loss": l, "epsilon": e} for s, l, e in out["losses"]],
        ["step", "loss", "epsilon"],
    )
    write_csv(
        os.path.join(args.out, "episodes.csv"),
        [
            {"episode": i, "seed": s, "return": r, "length": n}
            for i, s, r, n in out["episode_returns"]
        ],
        ["episode", "seed", "return", "length"],
    )
    _write_manifest(
        args.out,
        {
            "version": 1,
            "command": "train",
            "seed": train_cfg.seed,
            "steps": out["steps"],
            "env": env_cfg.to_dict(),
            "train": train_cfg.to_dict(),
            "checkpoint": os.path.basename(out["checkpoint"]),
            "files": ["loss.csv", "episodes.csv", os.path.basename(out["checkpoint"])],
        },
    )
    print(f"trained {out['steps']} steps -> {out['checkpoint']}")
    return 0


def cmd_evaluate(args) -> int:
    if args.suite not in BUILTIN_SUITES:
        print(f"error: unknown suite {args.suite!r}; built-ins: {sorted(BUILTIN_SUITES)}", file=sys.stderr)
        return 2
    suite = BUILTIN_SUITES[args.suite]
    if args.obstacles:
        from dataclasses import replace

        suite = replace(suite, obstacle_tag=args.obstacles)
    specs = args.policy or ["greedy", "random"]
    policies = {}
    for spec in specs:
        try:
            parse_policy(spec)  # validate early, including checkpoint loads
        except PolicySpecError as err:
            print(f"error: {err}", file=sys.stderr)
            return 2
        policies[_sanitize(spec)] = spec
    rows = run_suite(
        suite,
        policies,
        args.out,
        n_episodes=args.episodes,
        n_seeds=args.seeds,
        workers=args.workers,
    )
    print(f"{len(rows)} episode rows -> {os.path.join(args.out, 'metrics.csv')}")
    with open(os.path.join(args.out, "summary.txt")) as f:
        print(f.read(), end="")
    return 0


def cmd_zeta_field(args) -> int:
    data = zeta_field_data()  # raises if the field violates its invariants
    svg = zeta_field_svg(data)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w") as f:
        f.write(svg)
    print(f"{len(data['arrows'])} arrows -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttrk", description="active target tracking toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-episode", help="run one seeded episode under a policy")
    p.add_argument("--config", help="JSON file of environment config fields")
    p.add_argument("--policy", default="greedy", help="random | greedy | arvi[:k=v,...] | checkpoint:PATH")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--render", choices=("svg", "off"), default="svg")
    p.set_defaults(func=cmd_run_episode)

    p = sub.add_parser("train", help="train the Q-network")
    p.add_argument("--config", help='JSON file {"env": {...}, "train": {...}}')
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="full resume checkpoint to continue from")
    p.add_argument("--save-state", action="store_true", help="write full resume states at episode ends")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run an evaluation suite")
    p.add_argument("--suite", required=True)
    p.add_argument("--policy", action="append", help="repeatable policy spec")
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int, help="override suite episode count")
    p.add_argument("--seeds", type=int, help="override suite replicate count")
    p.add_argument("--obstacles", choices=("train", "unseen"))
    p.add_argument("--workers", type=int, help="worker processes (default: TTRK_THREADS or cpu count)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("zeta-field", help="render the obstacle-repulsion arrow field")
    p.add_argument("--out", required=True, help="output SVG path")
    p.set_defaults(func=cmd_zeta_field)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
