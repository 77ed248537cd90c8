#!/usr/bin/env python3
"""Train the desk-scale discovery policy and report its discovery rate.

Produces the checkpoint shipped at checkpoints/discovery_desk.json:

    python scripts/train_discovery.py --steps 60000 --seed 11 --out runs/disc

Evaluation afterwards:

    ttrk evaluate --suite discovery --out runs/disc_eval \
        --policy checkpoint:runs/disc/checkpoint_final.json --policy greedy
"""
import argparse
import json
import os
import sys
import time

from ttrk.env import Env, EnvConfig
from ttrk.learner import TrainConfig, train


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=60_000)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--out", default="runs/discovery")
    ap.add_argument("--profile", default="desk")
    ap.add_argument("--reward-scale", type=float, default=0.02)
    ap.add_argument("--eps-decay-steps", type=int, default=25_000)
    ap.add_argument("--lr", type=float, default=5e-4)
    args = ap.parse_args()

    env_cfg = EnvConfig(task="discovery")
    train_cfg = TrainConfig(
        steps=args.steps,
        seed=args.seed,
        profile=args.profile,
        reward_scale=args.reward_scale,
        eps_decay_steps=args.eps_decay_steps,
        lr=args.lr,
        checkpoint_every=10_000,
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.json"), "w") as f:
        json.dump({"env": env_cfg.to_dict(), "train": train_cfg.to_dict()}, f, indent=2, sort_keys=True)

    t0 = time.time()
    out = train(lambda: Env(env_cfg), train_cfg, out_dir=args.out)
    dt = time.time() - t0
    returns = [r for _, _, r, _ in out["episode_returns"]]
    tail = returns[-20:]
    print(f"steps={out['steps']} episodes={len(returns)} wall={dt:.0f}s")
    print(f"mean return last 20 episodes: {sum(tail) / len(tail):.1f}")
    print(f"checkpoint: {out['checkpoint']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
