"""Target stochastic dynamics with obstacle repulsion, and differential
drive agent kinematics over a discrete motion-primitive set."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Tuple

import numpy as np

from .geom import DEFAULT_OBSTACLE_SEARCH_RADIUS, Pose2, closest_obstacle, wrap_angle

if TYPE_CHECKING:
    from .worldmap import GridMap

_SPEED_EPS = 1e-6


@dataclass(frozen=True)
class TargetState:
    """Planar double-integrator state. `heading` tracks the velocity
    direction and keeps its previous value while the target is at rest."""

    y1: float
    y2: float
    vy1: float
    vy2: float
    heading: float = 0.0

    @classmethod
    def make(cls, y1, y2, vy1, vy2, prev_heading=0.0) -> "TargetState":
        speed = math.hypot(vy1, vy2)
        heading = math.atan2(vy2, vy1) if speed >= _SPEED_EPS else prev_heading
        return cls(float(y1), float(y2), float(vy1), float(vy2), float(wrap_angle(heading)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.y1, self.y2])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vy1, self.vy2])

    @property
    def speed(self) -> float:
        return math.hypot(self.vy1, self.vy2)

    def as_vector(self) -> np.ndarray:
        return np.array([self.y1, self.y2, self.vy1, self.vy2])


@dataclass(frozen=True)
class TargetParams:
    q: float
    nu_max: float
    r_margin: float = 1.0
    r_min: float = 1.0
    tau: float = 0.5


@dataclass(frozen=True)
class Action:
    """One motion primitive: linear and angular velocity held for tau."""

    v: float
    w: float


ACTIONS: Tuple[Action, ...] = tuple(
    Action(float(v), w) for v in (0, 1, 2, 3) for w in (0.0, -math.pi / 2, math.pi / 2)
)


@lru_cache(maxsize=None)
def system_matrices(q: float, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    """Double integrator transition matrix A and process noise W(q)."""
    i2 = np.eye(2)
    a = np.block([[i2, tau * i2], [np.zeros((2, 2)), i2]])
    w = q * np.block(
        [[tau**3 / 3 * i2, tau**2 / 2 * i2], [tau**2 / 2 * i2, tau * i2]]
    )
    a.setflags(write=False)
    w.setflags(write=False)
    return a, w


@lru_cache(maxsize=None)
def _noise_chol(q: float, tau: float) -> np.ndarray:
    _, w = system_matrices(q, tau)
    if q == 0.0:
        chol = np.zeros((4, 4))
    else:
        chol = np.linalg.cholesky(w)
    chol.setflags(write=False)
    return chol


def _repulsion_angle(heading: float, theta_o: float, nu: float, nu_max: float) -> float:
    """Direction the repulsion term pushes the velocity toward."""
    theta_rep = (math.pi / 2) * (1.0 + 1.0 / (1.0 + math.exp(-(nu - nu_max / 2.0))))
    if theta_o >= 0:
        return heading + theta_o - theta_rep
    return heading + theta_o + theta_rep


def zeta(
    y: TargetState,
    grid: "GridMap",
    p: TargetParams,
    search_radius: float = DEFAULT_OBSTACLE_SEARCH_RADIUS,
) -> np.ndarray:
    """Velocity nudge that steers the target away from its closest
    obstacle; zero when no obstacle is ahead within the search radius."""
    ob = closest_obstacle(grid, Pose2(y.y1, y.y2, y.heading), search_radius)
    if ob is None:
        return np.zeros(4)
    cos_plus = math.cos(ob.angle) if abs(ob.angle) <= math.pi / 2 else 0.0
    if cos_plus <= 0.0:
        return np.zeros(4)
    nu = y.speed
    a_t = nu * cos_plus / max(p.r_min, ob.r - p.r_margin) ** 2
    theta_rot = _repulsion_angle(y.heading, ob.angle, nu, p.nu_max)
    return np.array([0.0, 0.0, a_t * p.tau * math.cos(theta_rot), a_t * p.tau * math.sin(theta_rot)])


def _clamp_speed(vec: np.ndarray, nu_max: float) -> np.ndarray:
    speed = math.hypot(vec[2], vec[3])
    if speed > nu_max:
        vec = vec.copy()
        vec[2:] *= nu_max / speed
    return vec


def step_target(
    y: TargetState,
    grid: "GridMap",
    p: TargetParams,
    rng: np.random.Generator,
    search_radius: float = DEFAULT_OBSTACLE_SEARCH_RADIUS,
) -> TargetState:
    """One target step: linear dynamics + Gaussian noise + repulsion term.

    If the candidate position lands in an occupied cell (or off the map)
    the position is kept and the velocity is redirected along the
    repulsion direction with magnitude nu_t + n, n ~ N(0, 1). Draw order
    is fixed: the 4-vector noise first, then n only when needed.
    """
    a, _ = system_matrices(p.q, p.tau)
    chol = _noise_chol(p.q, p.tau)
    w = chol @ rng.standard_normal(4)
    cand = a @ y.as_vector() + w + zeta(y, grid, p, search_radius)
    cand = _clamp_speed(cand, p.nu_max)
    if not grid.is_occupied_at(cand[:2]):
        return TargetState.make(cand[0], cand[1], cand[2], cand[3], y.heading)
    n = rng.standard_normal()
    ob = closest_obstacle(grid, Pose2(y.y1, y.y2, y.heading), search_radius)
    if ob is not None:
        theta_rot = _repulsion_angle(y.heading, ob.angle, y.speed, p.nu_max)
    else:
        # collided with the map border with no obstacle in range: bounce back
        theta_rot = y.heading + math.pi
    vel = np.array([0.0, 0.0, (y.speed + n) * math.cos(theta_rot), (y.speed + n) * math.sin(theta_rot)])
    vel = _clamp_speed(vel, p.nu_max)
    return TargetState.make(y.y1, y.y2, vel[2], vel[3], y.heading)


def step_agent(x: Pose2, a: Action, tau: float) -> Pose2:
    """Differential drive update over one sampling period."""
    half = a.w * tau / 2.0
    sinc = math.sin(half) / half if half != 0.0 else 1.0
    return Pose2(
        x.x1 + a.v * tau * sinc * math.cos(x.theta + half),
        x.x2 + a.v * tau * sinc * math.sin(x.theta + half),
        x.theta + tau * a.w,
    )
