"""Episode orchestration: reset/step loop, reward, RL-state assembly,
task-specific initialization, and episode logging.

Per step, in order: the agent moves (blocked, rotation kept, when the new
position would come within r_margin of an obstacle), targets step (frozen
until first observed when move_after_first_obs), measurements are drawn,
beliefs are corrected where measurements exist, the reward is computed
from the posterior covariances, the visit grid absorbs the scan, beliefs
are predicted one step ahead, and the RL state is assembled from the
egocentric maps plus the non-geographic feature vector.

RL state feature vector layout (length 6 N + 2):
    per target: relative predicted mean position in the agent frame (2),
                predicted velocity rotated into the agent frame (2),
                log det of the predicted covariance (1),
                observed flag (1)
    tail:       closest-obstacle polar (r, angle), sentinel
                (2 r_sensor, 0) when no obstacle is within reach
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from . import belief as bel
from .dynamics import ACTIONS, Action, TargetParams, TargetState, step_agent, step_target, system_matrices
from .geom import Pose2, closest_obstacle, line_of_sight, rotate, to_frame
from .sensing import SensorParams, measure, scanned_cells
from .worldmap import GridMap, VisitGrid, extract_egocentric, generate_map, load_obstacle_set, update_visit_frequency

TASKS = ("insight", "navigation", "discovery", "random")

# initialization distance ranges, meters
INSIGHT_AGENT_TARGET = (3.0, 10.0)
INSIGHT_TARGET_BELIEF = (0.0, 3.0)
NAVIGATION_AGENT_TARGET = (15.0, 20.0)
DISCOVERY_AGENT_BELIEF = (3.0, 10.0)
DISCOVERY_BELIEF_TARGET = (15.0, 20.0)
RANDOM_AGENT_BELIEF_1 = (5.0, 20.0)
RANDOM_BELIEF_TARGET_1 = (0.0, 20.0)
RANDOM_AGENT_BELIEF_2 = (5.0, 10.0)
RANDOM_BELIEF_TARGET_2 = (0.0, 10.0)

MAX_INIT_ATTEMPTS = 10_000


@dataclass
class EnvConfig:
    n_targets: int = 1
    q: float = 0.5
    q_b: float = 0.5
    nu_max: float = 3.5
    T: int = 100
    tau: float = 0.5
    r_margin: float = 1.0
    r_min: float = 1.0
    penalty: float = 2.0
    c_f: float = 0.95
    task: str = "random"
    move_after_first_obs: Optional[bool] = None
    map_seed: Optional[int] = None
    obstacle_set: str = "train"
    n_obstacles: int = 4
    sigma0_pos: float = 30.0
    sigma0_vel: float = 3.0
    sensor: SensorParams = field(default_factory=SensorParams)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.T <= 0:
            raise ValueError("episode horizon must be positive")
        if self.move_after_first_obs is None:
            # evaluation tasks freeze the target until first contact
            self.move_after_first_obs = self.task != "random"

    @property
    def target(self) -> TargetParams:
        return TargetParams(self.q, self.nu_max, self.r_margin, self.r_min, self.tau)

    @property
    def beliefs(self) -> bel.BeliefParams:
        return bel.BeliefParams(self.q_b, self.sensor.v_diag, self.sigma0_pos, self.sigma0_vel)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sensor"]["v_diag"] = list(self.sensor.v_diag)
        d["version"] = 1
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        d.pop("version", None)
        sensor = d.pop("sensor", None)
        if sensor is not None:
            sensor = dict(sensor)
            if "v_diag" in sensor:
                sensor["v_diag"] = tuple(sensor["v_diag"])
            d["sensor"] = SensorParams(**sensor)
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class FeatureScaling:
    """Scaling applied to the feature vector at the learner boundary."""

    pos_scale: float
    vel_scale: float
    logdet_lo: float
    logdet_span: float
    n_targets: int

    def apply(self, phi: np.ndarray) -> np.ndarray:
        out = np.asarray(phi, dtype=float).copy()
        for i in range(self.n_targets):
            k = 6 * i
            out[k : k + 2] /= self.pos_scale
            out[k + 2 : k + 4] /= self.vel_scale
            out[k + 4] = (out[k + 4] - self.logdet_lo) / self.logdet_span
        out[-2] /= self.pos_scale
        return out


@dataclass
class RLState:
    maps: np.ndarray  # (25, 25, 5)
    phi: np.ndarray  # (6 N + 2,)


@dataclass
class StepResult:
    state: RLState
    reward: float
    done: bool
    info: dict


@dataclass
class Snapshot:
    """Planner-facing view of the environment at decision time: the pose
    plus one-step-ahead predicted beliefs."""

    pose: Pose2
    means: np.ndarray  # (N, 4) predicted means
    covs: np.ndarray  # (N, 4, 4) predicted covariances
    grid: GridMap
    sensor: SensorParams
    q_b: float
    tau: float
    r_margin: float


class EpisodeLog:
    """JSON-lines episode record; the offline contract for all metrics."""

    def __init__(self, header: dict):
        self.header = header
        self.records: List[dict] = []

    def append(self, record: dict) -> None:
        self.records.append(record)

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header, sort_keys=True, separators=(",", ":"))]
        lines += [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_jsonl())

    @classmethod
    def load(cls, path) -> "EpisodeLog":
        with open(path) as f:
            lines = [line for line in f.read().splitlines() if line]
        header = json.loads(lines[0])
        if header.get("type") != "header":
            raise ValueError("episode log missing header line")
        log = cls(header)
        log.records = [json.loads(line) for line in lines[1:]]
        return log


def compute_reward(posteriors: Sequence[bel.Belief], collision_attempt: bool, penalty: float) -> float:
    """Negated sum of posterior log-determinants, minus the collision
    penalty when the move was blocked."""
    r = -sum(b.logdet for b in posteriors)
    if collision_attempt:
        r -= penalty
    return float(r)


def build_phi(
    preds: Sequence[bel.Belief],
    pose: Pose2,
    observed: Sequence[bool],
    grid: GridMap,
    sensor: SensorParams,
) -> np.ndarray:
    """Non-geographic feature vector from one-step-ahead beliefs."""
    parts = []
    for b, obs in zip(preds, observed):
        rel_pos = to_frame(b.mean[:2], pose)
        rel_vel = rotate(b.mean[2:], -pose.theta)
        parts.extend([rel_pos[0], rel_pos[1], rel_vel[0], rel_vel[1], b.logdet, float(obs)])
    ob = closest_obstacle(grid, pose, 2.0 * sensor.r_sensor)
    if ob is None:
        parts.extend([2.0 * sensor.r_sensor, 0.0])
    else:
        parts.extend([ob.r, ob.angle])
    return np.asarray(parts)


def feature_scaling(cfg: EnvConfig) -> FeatureScaling:
    """Position/velocity/log-det scaling constants for the learner.

    The log-det range is anchored to the no-observation trajectory of the
    belief covariance over one episode.
    """
    a, w = system_matrices(cfg.q_b, cfg.tau)
    p = cfg.beliefs.initial_cov()
    p = a @ p @ a.T + w
    lo = float(np.linalg.slogdet(p)[1])
    for _ in range(cfg.T):
        p = a @ p @ a.T + w
    hi = float(np.linalg.slogdet(p)[1])
    return FeatureScaling(cfg.sensor.r_sensor, cfg.nu_max, lo, hi - lo, cfg.n_targets)


class _AttemptBudget:
    def __init__(self, limit: int):
        self.left = limit

    def spend(self) -> None:
        self.left -= 1
        if self.left < 0:
            raise RuntimeError("initialization rejection sampling exceeded its budget")


class Env:
    """One episode at a time; reseed via reset. Run independent instances
    (with independent seeds) for parallel episodes."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self._oset = load_obstacle_set(cfg.obstacle_set) if cfg.n_obstacles > 0 else None
        self._a_b, self._w_b = system_matrices(cfg.q_b, cfg.tau)
        self.grid: Optional[GridMap] = None
        self.visit: Optional[VisitGrid] = None
        self._done = True
        self._t = 0

    # -- initialization ------------------------------------------------

    def _sample_agent_pose(self, rng, budget) -> Pose2:
        ext = self.grid.extent
        while True:
            budget.spend()
            xy = rng.uniform(0.0, ext, 2)
            theta = rng.uniform(-math.pi, math.pi)
            if self.grid.clearance(xy) > self.cfg.r_margin and not self.grid.is_occupied_at(xy):
                return Pose2(xy[0], xy[1], theta)

    def _sample_near(self, rng, budget, center, rmin, rmax, tries=50):
        """Free-space point at a distance in [rmin, rmax] of center, or
        None after `tries` draws (caller restarts the outer loop)."""
        for _ in range(tries):
            budget.spend()
            ang = rng.uniform(-math.pi, math.pi)
            rad = math.sqrt(rng.uniform(rmin**2, rmax**2))
            p = np.asarray(center) + rad * np.array([math.cos(ang), math.sin(ang)])
            if self.grid.in_bounds(p) and not self.grid.is_occupied_at(p):
                return p
        return None

    def _sample_entities(self, rng, budget):
        """Agent pose, target states, and belief means per the task zones."""
        cfg = self.cfg
        while True:
            pose = self._sample_agent_pose(rng, budget)
            targets, means = [], []
            ok = True
            for _ in range(cfg.n_targets):
                if cfg.task in ("insight", "navigation"):
                    rng_t = INSIGHT_AGENT_TARGET if cfg.task == "insight" else NAVIGATION_AGENT_TARGET
                    t_pos = self._sample_near(rng, budget, pose.position, *rng_t)
                    if t_pos is None:
                        ok = False
                        break
                    if cfg.task == "navigation" and line_of_sight(self.grid, pose.position, t_pos):
                        ok = False
                        break
                    b_pos = self._sample_near(rng, budget, t_pos, *INSIGHT_TARGET_BELIEF)
                    if b_pos is None:
                        ok = False
                        break
                    if cfg.task == "navigation" and line_of_sight(self.grid, pose.position, b_pos):
                        ok = False
                        break
                else:
                    if cfg.task == "discovery":
                        rng_b, rng_t = DISCOVERY_AGENT_BELIEF, DISCOVERY_BELIEF_TARGET
                    elif cfg.n_targets == 1:
                        rng_b, rng_t = RANDOM_AGENT_BELIEF_1, RANDOM_BELIEF_TARGET_1
                    else:
                        rng_b, rng_t = RANDOM_AGENT_BELIEF_2, RANDOM_BELIEF_TARGET_2
                    b_pos = self._sample_near(rng, budget, pose.position, *rng_b)
                    if b_pos is None:
                        ok = False
                        break
                    t_pos = self._sample_near(rng, budget, b_pos, *rng_t)
                    if t_pos is None:
                        ok = False
                        break
                heading = rng.uniform(-math.pi, math.pi)
                targets.append(TargetState.make(t_pos[0], t_pos[1], 0.0, 0.0, heading))
                means.append(np.array([b_pos[0], b_pos[1], 0.0, 0.0]))
            if ok:
                return pose, targets, means

    # -- episode interface ---------------------------------------------

    def reset(self, seed: int) -> RLState:
        cfg = self.cfg
        children = np.random.SeedSequence(seed).spawn(3 + cfg.n_targets)
        map_seed = cfg.map_seed if cfg.map_seed is not None else int(children[0].generate_state(1)[0])
        self.grid = generate_map(map_seed, self._oset, cfg.n_obstacles)
        self.visit = VisitGrid.zeros_like(self.grid)
        rng_init = np.random.default_rng(children[1])
        self._rng_sensor = np.random.default_rng(children[2])
        self._rng_targets = [np.random.default_rng(c) for c in children[3:]]

        budget = _AttemptBudget(MAX_INIT_ATTEMPTS)
        self.pose, self.targets, means = self._sample_entities(rng_init, budget)
        cov0 = cfg.beliefs.initial_cov()
        self._post = [bel.Belief(m, cov0.copy()) for m in means]
        self._pred = [bel.predict(b, self._a_b, self._w_b) for b in self._post]
        self._ever_observed = [False] * cfg.n_targets
        self._t = 0
        self._done = False

        self.log = EpisodeLog(
            {
                "type": "header",
                "version": 1,
                "seed": int(seed),
                "map_seed": int(map_seed),
                "config": cfg.to_dict(),
                "config_hash": cfg.config_hash(),
            }
        )
        self._append_record(None, None, [None] * cfg.n_targets, [False] * cfg.n_targets, None, False, 0)
        self.state = self._assemble_state([False] * cfg.n_targets)
        return self.state

    def step(self, action: Union[int, Action]) -> StepResult:
        if self._done:
            raise RuntimeError("episode is done; call reset")
        cfg = self.cfg
        if isinstance(action, Action):
            action_index = ACTIONS.index(action)
        else:
            action_index = int(action)
        act = ACTIONS[action_index]

        candidate = step_agent(self.pose, act, cfg.tau)
        blocked = (
            not self.grid.in_bounds(candidate.position)
            or self.grid.clearance(candidate.position) < cfg.r_margin
        )
        if blocked:
            self.pose = Pose2(self.pose.x1, self.pose.x2, candidate.theta)
        else:
            self.pose = candidate

        tp = cfg.target
        for i in range(cfg.n_targets):
            if not cfg.move_after_first_obs or self._ever_observed[i]:
                self.targets[i] = step_target(
                    self.targets[i], self.grid, tp, self._rng_targets[i], 2.0 * cfg.sensor.r_sensor
                )

        measurements = []
        observed = []
        for i in range(cfg.n_targets):
            m = measure(self.pose, self.targets[i], self.grid, cfg.sensor, self._rng_sensor, i)
            measurements.append(m)
            observed.append(m is not None)

        v = cfg.sensor.V
        for i, m in enumerate(measurements):
            if m is not None:
                self._post[i] = bel.update(self._pred[i], m, self.pose, v)
            else:
                self._post[i] = self._pred[i]
        for i, obs in enumerate(observed):
            self._ever_observed[i] = self._ever_observed[i] or obs

        reward = compute_reward(self._post, blocked, cfg.penalty)

        scanned = scanned_cells(self.pose, self.grid, cfg.sensor)
        vbar = float(np.mean([np.hypot(b.mean[2], b.mean[3]) for b in self._post]))
        self.visit = update_visit_frequency(
            self.visit, scanned, vbar, cfg.tau, cfg.sensor.r_sensor, cfg.c_f
        )

        self._pred = [bel.predict(b, self._a_b, self._w_b) for b in self._post]

        self._t += 1
        self._done = self._t >= cfg.T
        self._append_record(
            act, action_index, measurements, observed, reward, blocked, int(scanned.shape[0])
        )
        self.state = self._assemble_state(observed)
        info = {
            "observed": list(observed),
            "collision_attempt": blocked,
            "logdet": [b.logdet for b in self._post],
        }
        return StepResult(self.state, reward, self._done, info)

    # -- views ----------------------------------------------------------

    def snapshot(self) -> Snapshot:
        cfg = self.cfg
        return Snapshot(
            pose=self.pose,
            means=np.stack([b.mean for b in self._pred]),
            covs=np.stack([b.cov for b in self._pred]),
            grid=self.grid,
            sensor=cfg.sensor,
            q_b=cfg.q_b,
            tau=cfg.tau,
            r_margin=cfg.r_margin,
        )

    def feature_scaling(self) -> FeatureScaling:
        return feature_scaling(self.cfg)

    @property
    def t(self) -> int:
        return self._t

    @property
    def done(self) -> bool:
        return self._done

    def _assemble_state(self, observed) -> RLState:
        maps = extract_egocentric(self.grid, self.visit, self.pose)
        phi = build_phi(self._pred, self.pose, observed, self.grid, self.cfg.sensor)
        return RLState(maps, phi)

    def _append_record(self, act, action_index, measurements, observed, reward, blocked, n_scanned):
        self.log.append(
            {
                "t": self._t,
                "pose": [self.pose.x1, self.pose.x2, self.pose.theta],
                "action": None if act is None else [act.v, act.w],
                "action_index": action_index,
                "targets": [t.as_vector().tolist() for t in self.targets],
                "beliefs": [
                    {"mean": b.mean.tolist(), "cov": b.cov.reshape(-1).tolist()} for b in self._post
                ],
                "beliefs_pred": [
                    {"mean": b.mean.tolist(), "cov": b.cov.reshape(-1).tolist()} for b in self._pred
                ],
                "measurements": [None if m is None else [m.r, m.alpha] for m in measurements],
                "observed": [bool(o) for o in observed],
                "reward": reward,
                "collision_attempt": bool(blocked),
                "scanned": n_scanned,
                "logdet": [b.logdet for b in self._post],
            }
        )
