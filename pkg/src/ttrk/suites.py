"""Built-in evaluation suites mirroring the experiment grids: paired
scenario seeds across policies, parameter sweeps, and CSV/summary/density
outputs."""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .env import Env, EnvConfig, EpisodeLog
from .metrics import compute_metrics, density_maps, write_csv
from .policies import parse_policy
from .rendering import heat_svg


@dataclass(frozen=True)
class Suite:
    name: str
    task: str
    n_targets: int = 1
    n_episodes: int = 10
    n_seeds: int = 3
    q: float = 0.5
    q_b: float = 0.5
    nu_max: float = 3.5
    sweep_param: Optional[str] = None  # "q" or "nu_max"
    sweep_values: Tuple[float, ...] = ()
    obstacle_tag: str = "train"
    base_seed: int = 7000

    def points(self) -> List[Tuple[str, EnvConfig]]:
        """(label, config) per sweep point; a single point when no sweep."""
        base = dict(
            task=self.task,
            n_targets=self.n_targets,
            q=self.q,
            q_b=self.q_b,
            nu_max=self.nu_max,
            obstacle_set=self.obstacle_tag,
        )
        if self.sweep_param is None:
            return [("base", EnvConfig(**base))]
        out = []
        for val in self.sweep_values:
            d = dict(base)
            d[self.sweep_param] = val
            out.append((f"{self.sweep_param}={val:g}", EnvConfig(**d)))
        return out

    def episode_seed(self, sweep_idx: int, episode: int, replicate: int) -> int:
        ss = np.random.SeedSequence([self.base_seed, sweep_idx, episode, replicate])
        return int(ss.generate_state(1)[0])


BUILTIN_SUITES: Dict[str, Suite] = {
    "insight-q": Suite(
        name="insight-q",
        task="insight",
        q_b=0.5,
        nu_max=3.0,
        sweep_param="q",
        sweep_values=(0.02, 0.1, 0.2, 1.0, 2.0),
        base_seed=7101,
    ),
    "insight-vmax": Suite(
        name="insight-vmax",
        task="insight",
        q=0.2,
        q_b=0.5,
        sweep_param="nu_max",
        sweep_values=(2.5, 2.75, 3.0, 3.25, 3.5),
        base_seed=7102,
    ),
    "navigation": Suite(name="navigation", task="navigation", q=0.5, nu_max=3.5, base_seed=7103),
    "discovery": Suite(name="discovery", task="discovery", q=0.5, nu_max=3.5, base_seed=7104),
    "two-target": Suite(
        name="two-target",
        task="insight",
        n_targets=2,
        q_b=0.2,
        nu_max=1.0,
        sweep_param="q",
        sweep_values=(0.002, 0.02, 0.2),
        base_seed=7105,
    ),
}


def run_episode(cfg: EnvConfig, policy_spec, seed: int):
    """One full episode under a policy (spec string or policy object);
    returns the finished environment and the policy."""
    env = Env(cfg)
    policy = parse_policy(policy_spec) if isinstance(policy_spec, str) else policy_spec
    policy.reset(seed)
    env.reset(seed)
    while not env.done:
        env.step(policy.act(env))
    return env, policy


def _job(args) -> Tuple[tuple, dict, str]:
    (suite_name, label, sweep_idx, cfg_doc, episode, replicate, policy_name, policy_spec, seed) = args
    cfg = EnvConfig.from_dict(cfg_doc)
    env, _ = run_episode(cfg, policy_spec, seed)
    m = compute_metrics(env.log)
    row = {
        "suite": suite_name,
        "label": label,
        "episode": episode,
        "replicate": replicate,
        "policy": policy_name,
        "scenario_seed": seed,
        "config_hash": cfg.config_hash(),
        "jbar_mean": m.jbar_mean,
        "sd_jbar": "" if m.sd_jbar is None else m.sd_jbar,
        "eta_mean": m.eta_mean,
        "discovered": m.discovered_all,
        "collision_attempts": m.collision_attempts,
    }
    for i, v in enumerate(m.jbar):
        row[f"jbar_{i}"] = v
    key = (sweep_idx, episode, replicate, policy_name)
    return key, row, env.log.to_jsonl()


CSV_COLUMNS = [
    "suite",
    "label",
    "episode",
    "replicate",
    "policy",
    "scenario_seed",
    "config_hash",
    "jbar_mean",
    "sd_jbar",
    "eta_mean",
    "discovered",
    "collision_attempts",
]


def max_workers() -> int:
    env_cap = os.environ.get("TTRK_THREADS")
    if env_cap is not None:
        return max(int(env_cap), 1)
    return max(os.cpu_count() or 1, 1)


def run_suite(
    suite: Suite,
    policies: Dict[str, str],
    out_dir,
    n_episodes: Optional[int] = None,
    n_seeds: Optional[int] = None,
    workers: Optional[int] = None,
) -> List[dict]:
    """Run episodes x seeds x policies (paired scenario seeds), write
    metrics CSV, summary table, per-policy density maps, and a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    log_dir = os.path.join(out_dir, "logs")
    os.makedirs(log_dir, exist_ok=True)
    n_episodes = suite.n_episodes if n_episodes is None else n_episodes
    n_seeds = suite.n_seeds if n_seeds is None else n_seeds

    jobs = []
    for sweep_idx, (label, cfg) in enumerate(suite.points()):
        cfg_doc = cfg.to_dict()
        for episode in range(n_episodes):
            for replicate in range(n_seeds):
                seed = suite.episode_seed(sweep_idx, episode, replicate)
                for policy_name, spec in sorted(policies.items()):
                    jobs.append(
                        (suite.name, label, sweep_idx, cfg_doc, episode, replicate, policy_name, spec, seed)
                    )

    workers = workers if workers is not None else max_workers()
    results = []
    if workers <= 1:
        for job in jobs:
            results.append(_job(job))
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_job, jobs, chunksize=1))
    results.sort(key=lambda kr: kr[0])

    rows = []
    columns = list(CSV_COLUMNS)
    per_target_cols = [f"jbar_{i}" for i in range(suite.n_targets)]
    columns += per_target_cols
    logs_by_policy_label: Dict[Tuple[str, str], List[EpisodeLog]] = {}
    for key, row, log_text in results:
        rows.append(row)
        name = f"{row['policy']}_{row['label']}_ep{row['episode']}_rep{row['replicate']}.jsonl"
        name = name.replace("=", "-")
        with open(os.path.join(log_dir, name), "w") as f:
            f.write(log_text)
        lines = log_text.splitlines()
        log = EpisodeLog(json.loads(lines[0]))
        log.records = [json.loads(x) for x in lines[1:]]
        logs_by_policy_label.setdefault((row["policy"], row["label"]), []).append(log)

    write_csv(os.path.join(out_dir, "metrics.csv"), rows, columns)
    _write_summary(os.path.join(out_dir, "summary.txt"), suite, rows, sorted(policies))
    density_files = []
    for (policy, label), logs in sorted(logs_by_policy_label.items()):
        scan, hist = density_maps(logs)
        tag = f"{policy}_{label}".replace("=", "-")
        scan_path = os.path.join(out_dir, f"density_scan_{tag}.svg")
        hist_path = os.path.join(out_dir, f"density_belief_{tag}.svg")
        with open(scan_path, "w") as f:
            f.write(heat_svg(scan, resolution=1.0, scale=3.0))
        hist_norm = hist / hist.max() if hist.max() > 0 else hist
        with open(hist_path, "w") as f:
            f.write(heat_svg(hist_norm, resolution=1.0, scale=8.0))
        density_files += [os.path.basename(scan_path), os.path.basename(hist_path)]

    manifest = {
        "version": 1,
        "suite": suite.name,
        "policies": dict(sorted(policies.items())),
        "n_episodes": n_episodes,
        "n_seeds": n_seeds,
        "rows": len(rows),
        "files": ["metrics.csv", "summary.txt"] + sorted(density_files),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True, separators=(",", ":"), indent=None)
    return rows


def _write_summary(path, suite: Suite, rows: List[dict], policy_names: Sequence[str]) -> None:
    lines = [f"suite: {suite.name}"]
    labels = []
    for row in rows:
        if row["label"] not in labels:
            labels.append(row["label"])
    for label in labels:
        for policy in policy_names:
            sel = [r for r in rows if r["label"] == label and r["policy"] == policy]
            if not sel:
                continue
            jb = np.array([r["jbar_mean"] for r in sel])
            eta = np.array([r["eta_mean"] for r in sel])
            disc = np.array([1.0 if r["discovered"] else 0.0 for r in sel])
            col = np.array([r["collision_attempts"] for r in sel], dtype=float)
            lines.append(
                f"{label} {policy}: jbar {jb.mean():.4f}+-{jb.std():.4f} "
                f"eta {eta.mean():.4f}+-{eta.std():.4f} "
                f"discovery {disc.mean():.2f} collisions {col.mean():.2f}"
            )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
