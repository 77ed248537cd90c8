"""Offline metrics from episode logs: normalized information objective,
resilience, discovery, collision counts, and density maps. Everything is
recomputed from the JSON-lines log (plus the deterministic map rebuild),
never from in-memory environment state."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import system_matrices
from .env import EnvConfig, EpisodeLog
from .geom import Pose2, to_frame
from .sensing import scanned_cells
from .worldmap import GridMap, generate_map, load_obstacle_set

BELIEF_HIST_X = (-2.0, 8.0)
BELIEF_HIST_Y = (-5.0, 5.0)
BELIEF_HIST_BIN = 0.25


@dataclass
class EpisodeMetrics:
    jbar: List[float]
    jbar_mean: float
    sd_jbar: Optional[float]
    eta: List[float]
    eta_mean: float
    discovered: List[bool]
    discovered_all: bool
    collision_attempts: int


def _step_records(log: EpisodeLog) -> List[dict]:
    recs = sorted((r for r in log.records if r["t"] > 0), key=lambda r: r["t"])
    return recs


def _initial_cov(log: EpisodeLog, target: int) -> np.ndarray:
    first = next(r for r in log.records if r["t"] == 0)
    return np.asarray(first["beliefs"][target]["cov"]).reshape(4, 4)


def jbar(log: EpisodeLog, q_b: float, tau: float, T: int) -> List[float]:
    """Normalized negative log-det of predicted covariances, per target.

    0 corresponds to the observation-free prediction rollout from the
    episode's actual initial covariance; 1 to the (unattainable) bound
    where every predicted covariance collapses to the process noise.
    """
    a, w = system_matrices(q_b, tau)
    recs = _step_records(log)
    if len(recs) != T:
        raise ValueError(f"log has {len(recs)} step records, expected T={T}")
    sign, logdet_w = np.linalg.slogdet(w)
    if sign <= 0:
        raise ValueError("process noise is not positive definite")
    j_max = -T * logdet_w
    n = len(recs[0]["beliefs_pred"])
    out = []
    for i in range(n):
        j = 0.0
        for rec in recs:
            cov = np.asarray(rec["beliefs_pred"][i]["cov"]).reshape(4, 4)
            j -= float(np.linalg.slogdet(cov)[1])
        p = _initial_cov(log, i)
        p = a @ p @ a.T + w  # the initial prediction, not part of the sum
        j_min = 0.0
        for _ in range(T):
            p = a @ p @ a.T + w
            j_min -= float(np.linalg.slogdet(p)[1])
        if j_max <= j_min:
            raise ValueError("degenerate configuration: J_max <= J_min")
        out.append((j - j_min) / (j_max - j_min))
    return out


def resilience_from_flags(flags: Sequence[bool]) -> float:
    """Re-discoveries divided by losses over an observed-flag sequence;
    1.0 when the target is never lost."""
    losses = 0
    rediscoveries = 0
    for prev, cur in zip(flags, flags[1:]):
        if prev and not cur:
            losses += 1
        elif cur and not prev and losses > 0:
            rediscoveries += 1
    return rediscoveries / losses if losses else 1.0


def resilience(log: EpisodeLog) -> List[float]:
    recs = _step_records(log)
    n = len(recs[0]["observed"])
    return [resilience_from_flags([r["observed"][i] for r in recs]) for i in range(n)]


def discovery(log: EpisodeLog) -> List[bool]:
    """Whether each target was observed at least once."""
    recs = _step_records(log)
    n = len(recs[0]["observed"])
    return [any(r["observed"][i] for r in recs) for i in range(n)]


def collision_attempts(log: EpisodeLog) -> int:
    return sum(bool(r["collision_attempt"]) for r in _step_records(log))


def compute_metrics(log: EpisodeLog) -> EpisodeMetrics:
    cfg = EnvConfig.from_dict(log.header["config"])
    jb = jbar(log, cfg.q_b, cfg.tau, cfg.T)
    eta = resilience(log)
    disc = discovery(log)
    return EpisodeMetrics(
        jbar=jb,
        jbar_mean=float(np.mean(jb)),
        sd_jbar=float(np.std(jb)) if len(jb) > 1 else None,
        eta=eta,
        eta_mean=float(np.mean(eta)),
        discovered=disc,
        discovered_all=all(disc),
        collision_attempts=collision_attempts(log),
    )


def grid_for_log(log: EpisodeLog) -> GridMap:
    """Rebuild the episode's map deterministically from the log header."""
    cfg = EnvConfig.from_dict(log.header["config"])
    oset = load_obstacle_set(cfg.obstacle_set) if cfg.n_obstacles > 0 else None
    return generate_map(log.header["map_seed"], oset, cfg.n_obstacles)


def density_maps(logs: Sequence[EpisodeLog]) -> Tuple[np.ndarray, np.ndarray]:
    """(scan density, belief histogram) aggregated over episodes.

    Scan density: per-cell count of scanned steps in global map
    coordinates, normalized by its maximum. Belief histogram: posterior
    belief positions in the agent frame, binned at 0.25 m over
    x in (-2, 8), y in (-5, 5); raw counts.
    """
    scan = None
    xs, ys = [], []
    for log in logs:
        cfg = EnvConfig.from_dict(log.header["config"])
        grid = grid_for_log(log)
        if scan is None:
            scan = np.zeros((grid.width, grid.height))
        for rec in _step_records(log):
            pose = Pose2(*rec["pose"])
            cells = scanned_cells(pose, grid, cfg.sensor)
            if cells.shape[0] != rec["scanned"]:
                raise ValueError("scan reconstruction mismatch: log and map disagree")
            if cells.shape[0]:
                scan[cells[:, 0], cells[:, 1]] += 1.0
            for b in rec["beliefs"]:
                rel = to_frame(np.asarray(b["mean"][:2]), pose)
                xs.append(rel[0])
                ys.append(rel[1])
    if scan is None:
        raise ValueError("no logs given")
    if scan.max() > 0:
        scan = scan / scan.max()
    nx = int(round((BELIEF_HIST_X[1] - BELIEF_HIST_X[0]) / BELIEF_HIST_BIN))
    ny = int(round((BELIEF_HIST_Y[1] - BELIEF_HIST_Y[0]) / BELIEF_HIST_BIN))
    hist, _, _ = np.histogram2d(xs, ys, bins=[nx, ny], range=[BELIEF_HIST_X, BELIEF_HIST_Y])
    return scan, hist


def write_csv(path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    """Deterministic CSV: fixed column order, repr-formatted floats."""
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for col in columns:
            val = row.get(col, "")
            if isinstance(val, bool):
                cells.append(str(int(val)))
            elif isinstance(val, float):
                cells.append(repr(val))
            else:
                cells.append(str(val))
        lines.append(",".join(cells))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
