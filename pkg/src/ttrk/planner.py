"""Non-learning baselines: an anytime receding-horizon best-first search
over the motion-primitive tree maximizing the summed one-step-ahead
-log det of belief covariances, plus greedy and uniform-random policies.

Tree semantics: a node at depth d holds the pose reached after d
primitives and the covariances predicted for depth d+1. Expanding to a
child applies the EKF covariance correction whenever the child pose can
observe the predicted mean, then scores the child with
-log det(A S A^T + W) summed over targets (the next one-step-ahead
prediction). Belief means propagate by the internal linear model only:
the planner knows exactly what the filter knows.
"""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ._ray import ray_clear_single
from .belief import obs_jacobian
from .dynamics import ACTIONS, system_matrices, step_agent
from .env import Snapshot
from .geom import Pose2, wrap_angle
from .sensing import SensorParams
from .worldmap import GridMap

_TWO_PI = 2.0 * math.pi


@dataclass
class PlannerConfig:
    horizon: int = 12
    execute_steps: int = 5
    node_budget: Optional[int] = 20_000
    time_budget: Optional[float] = None  # seconds; None means node-limited
    prune_cell: Optional[float] = 1.0  # meters; None disables pruning

    def __post_init__(self):
        if not (1 <= self.execute_steps <= self.horizon):
            raise ValueError("execute_steps must lie in [1, horizon]")


class PlanNode:
    __slots__ = ("pose", "depth", "covs_next", "objective", "actions", "counter")

    def __init__(self, pose, depth, covs_next, objective, actions, counter):
        self.pose = pose
        self.depth = depth
        self.covs_next = covs_next  # per-target predicted covs for depth+1
        self.objective = objective
        self.actions = actions
        self.counter = counter


def _correct_cov(cov: np.ndarray, pose: Pose2, mean_pos, v: np.ndarray) -> np.ndarray:
    """Joseph-form covariance correction; measurement values drop out."""
    hmat = obs_jacobian(pose, mean_pos)
    s = hmat @ cov @ hmat.T + v
    det = s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0]
    s_inv = np.array([[s[1, 1], -s[0, 1]], [-s[1, 0], s[0, 0]]]) / det
    gain = cov @ hmat.T @ s_inv
    ikh = np.eye(cov.shape[0]) - gain @ hmat
    out = ikh @ cov @ ikh.T + gain @ v @ gain.T
    return 0.5 * (out + out.T)


def _det4(m: np.ndarray) -> float:
    """Cofactor-expansion determinant of a 4x4 matrix."""
    (a, b, c, d), (e, f, g, h), (i, j, k, l), (mm, n, o, p) = m
    kp_lo = k * p - l * o
    jp_ln = j * p - l * n
    jo_kn = j * o - k * n
    ip_lm = i * p - l * mm
    io_km = i * o - k * mm
    in_jm = i * n - j * mm
    return (
        a * (f * kp_lo - g * jp_ln + h * jo_kn)
        - b * (e * kp_lo - g * ip_lm + h * io_km)
        + c * (e * jp_ln - f * ip_lm + h * in_jm)
        - d * (e * jo_kn - f * io_km + g * in_jm)
    )


def _neg_logdet(cov: np.ndarray) -> float:
    det = _det4(cov)
    if det <= 0.0:
        raise ValueError("covariance lost positive definiteness in rollout")
    return -math.log(det)


class _SnapshotGeometry:
    """Scalar-math observability and blocking predicates over the
    snapshot's grid, with an exact clearance fallback only inside the
    cell-quantization band around the blocking margin."""

    def __init__(self, grid: GridMap, sensor: SensorParams, r_margin: float):
        self.grid = grid
        self.occ = grid.cells
        self.res = grid.resolution
        self.ox, self.oy = float(grid.origin[0]), float(grid.origin[1])
        ext = grid.extent
        self.ex, self.ey = float(ext[0]), float(ext[1])
        self.r2 = sensor.r_sensor * sensor.r_sensor
        self.half_fov = sensor.fov / 2.0
        self.r_margin = r_margin
        self.clear_grid = grid.center_clearance
        half_diag = self.res * math.sqrt(2.0) / 2.0
        self.band_lo = r_margin - half_diag
        self.band_hi = r_margin + half_diag

    def blocked(self, x: float, y: float) -> bool:
        rx, ry = x - self.ox, y - self.oy
        if not (0.0 <= rx < self.ex and 0.0 <= ry < self.ey):
            return True
        c = self.clear_grid[int(rx // self.res), int(ry // self.res)]
        if c >= self.band_hi:
            return False
        if c < self.band_lo:
            return True
        return self.grid.clearance((x, y)) < self.r_margin

    def mean_observable(self, pose: Pose2, mx: float, my: float) -> bool:
        """Range, field-of-view, occlusion, and Jacobian-existence gates
        for a predicted mean position."""
        rx, ry = mx - self.ox, my - self.oy
        if not (0.0 <= rx < self.ex and 0.0 <= ry < self.ey):
            return False
        dx, dy = mx - pose.x1, my - pose.x2
        d2 = dx * dx + dy * dy
        if d2 > self.r2 or d2 < 1e-18:
            return False
        alpha = (math.atan2(dy, dx) - pose.theta + math.pi) % _TWO_PI - math.pi
        if abs(alpha) > self.half_fov:
            return False
        return ray_clear_single(pose.x1 - self.ox, pose.x2 - self.oy, rx, ry, self.occ, self.res)


def can_correct(pose: Pose2, mean_pos, grid: GridMap, sensor: SensorParams, r_margin: float = 0.0) -> bool:
    """Whether a covariance correction applies at this pose for this
    predicted mean (observable, with the range-bearing Jacobian defined)."""
    geo = _SnapshotGeometry(grid, sensor, r_margin)
    return geo.mean_observable(pose, float(mean_pos[0]), float(mean_pos[1]))


def simulate_covariance(
    cov: np.ndarray,
    poses: Sequence[Pose2],
    means: np.ndarray,
    grid: GridMap,
    sensor: SensorParams,
    q_b: float,
    tau: float,
) -> List[np.ndarray]:
    """Deterministic covariance rollout along a pose sequence.

    `cov` is the predicted covariance entering the first pose; `means`
    (len(poses), 4) is the deterministically propagated mean trajectory.
    Each output entry is the covariance after the correction at that pose
    (equal to the prediction when the mean is not observable).
    """
    a, w = system_matrices(q_b, tau)
    v = sensor.V
    geo = _SnapshotGeometry(grid, sensor, 0.0)
    out = []
    current = np.asarray(cov, dtype=float)
    for k, pose in enumerate(poses):
        if k > 0:
            current = a @ current @ a.T + w
        if geo.mean_observable(pose, float(means[k][0]), float(means[k][1])):
            current = _correct_cov(current, pose, means[k][:2], v)
        out.append(current)
    return out


def plan(snap: Snapshot, cfg: PlannerConfig, return_info: bool = False):
    """Best-first anytime search; returns `execute_steps` action indices
    (padded with the stop action when the best path is shorter).
    Deterministic given the snapshot and budget; ties prefer the
    lexicographically smallest action sequence."""
    a, w = system_matrices(snap.q_b, snap.tau)
    v = snap.sensor.V
    n = snap.means.shape[0]
    geo = _SnapshotGeometry(snap.grid, snap.sensor, snap.r_margin)
    means_by_depth = [np.asarray(snap.means, dtype=float)]
    for _ in range(1, cfg.horizon):
        means_by_depth.append(np.stack([a @ m for m in means_by_depth[-1]]))
    mean_xy = [[(float(ms[i][0]), float(ms[i][1])) for i in range(n)] for ms in means_by_depth]

    counter = 0
    root = PlanNode(snap.pose, 0, [np.asarray(c, dtype=float) for c in snap.covs], 0.0, (), counter)
    heap: List[Tuple[float, int, PlanNode]] = [(0.0, counter, root)]
    buckets = {}
    best_complete: Optional[Tuple[float, tuple]] = None
    deepest: Tuple[int, float, tuple] = (0, 0.0, ())
    expansions = 0
    t0 = time.monotonic()

    def _neg_seq(actions):
        # larger-is-better wrapper so lexicographically smaller wins ties
        return tuple(-x for x in actions)

    def better_complete(obj, actions):
        return best_complete is None or (obj, _neg_seq(actions)) > (
            best_complete[0],
            _neg_seq(best_complete[1]),
        )

    range_n = range(n)
    while heap:
        if cfg.node_budget is not None and expansions >= cfg.node_budget:
            break
        if cfg.time_budget is not None and time.monotonic() - t0 > cfg.time_budget:
            break
        _, _, node = heapq.heappop(heap)
        if cfg.prune_cell is not None and node.depth > 0:
            cur = buckets.get(_bucket_key(node, cfg.prune_cell))
            if cur is not None and cur[1] != node.counter:
                continue  # superseded by a better node in the same bucket
        expansions += 1

        child_depth = node.depth + 1
        means = means_by_depth[node.depth]
        xy = mean_xy[node.depth]
        shared_next = None
        shared_incr = None
        for ai in range(len(ACTIONS)):
            child_pose = step_agent(node.pose, ACTIONS[ai], snap.tau)
            if geo.blocked(child_pose.x1, child_pose.x2):
                continue
            obs = [geo.mean_observable(child_pose, xy[i][0], xy[i][1]) for i in range_n]
            if any(obs):
                covs_next = []
                incr = 0.0
                for i in range_n:
                    post = (
                        _correct_cov(node.covs_next[i], child_pose, means[i][:2], v)
                        if obs[i]
                        else node.covs_next[i]
                    )
                    nxt = a @ post @ a.T + w
                    covs_next.append(nxt)
                    incr += _neg_logdet(nxt)
            else:
                if shared_next is None:
                    shared_next = [a @ node.covs_next[i] @ a.T + w for i in range_n]
                    shared_incr = sum(_neg_logdet(c) for c in shared_next)
                covs_next = shared_next
                incr = shared_incr
            counter += 1
            objective = node.objective + incr
            actions = node.actions + (ai,)
            child = PlanNode(child_pose, child_depth, covs_next, objective, actions, counter)
            if child_depth == cfg.horizon:
                if better_complete(objective, actions):
                    best_complete = (objective, actions)
            else:
                if cfg.prune_cell is not None:
                    key = _bucket_key(child, cfg.prune_cell)
                    cur = buckets.get(key)
                    if cur is not None and cur[0] >= objective:
                        continue
                    buckets[key] = (objective, counter)
                heapq.heappush(heap, (-objective, counter, child))
            cand = (child_depth, objective, _neg_seq(actions))
            if cand > (deepest[0], deepest[1], _neg_seq(deepest[2])):
                deepest = (child_depth, objective, actions)

    if best_complete is not None:
        chosen = list(best_complete[1])
        objective = best_complete[0]
    else:
        chosen = list(deepest[2])
        objective = deepest[1]
    while len(chosen) < cfg.execute_steps:
        chosen.append(0)  # stop action
    chosen = chosen[: cfg.execute_steps]
    if return_info:
        return chosen, {
            "objective": objective,
            "nodes_expanded": expansions,
            "complete": best_complete is not None,
        }
    return chosen


def _bucket_key(node: PlanNode, prune_cell: float):
    sector = int((node.pose.theta + math.pi) / (math.pi / 4.0)) % 8
    return (
        node.depth,
        math.floor(node.pose.x1 / prune_cell),
        math.floor(node.pose.x2 / prune_cell),
        sector,
    )


def greedy_policy(snap: Snapshot) -> int:
    """Depth-1 maximization of the planner objective; ties resolve to the
    lowest action index."""
    return plan(snap, PlannerConfig(horizon=1, execute_steps=1, node_budget=None, prune_cell=None))[0]


def random_policy(rng: np.random.Generator) -> int:
    return int(rng.integers(len(ACTIONS)))
