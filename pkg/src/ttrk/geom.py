"""SE(2) poses, frame transforms, and grid geometry primitives."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from ._ray import rays_clear

if TYPE_CHECKING:
    from .worldmap import GridMap

# Beyond twice the sensing range an obstacle affects neither the target
# repulsion term nor the agent's obstacle feature.
DEFAULT_OBSTACLE_SEARCH_RADIUS = 20.0


def wrap_angle(a):
    """Wrap an angle (scalar or array) to [-pi, pi)."""
    if isinstance(a, np.ndarray):
        return np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class Pose2:
    """SE(2) pose; theta is normalized to [-pi, pi) on construction."""

    x1: float
    x2: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x1, self.x2])


@dataclass(frozen=True)
class Polar:
    """Polar coordinate: range r >= 0, angle in [-pi, pi)."""

    r: float
    angle: float

    def __post_init__(self):
        if self.r < 0:
            raise ValueError(f"negative range: {self.r}")
        object.__setattr__(self, "angle", float(wrap_angle(self.angle)))


def rotate(v, angle: float) -> np.ndarray:
    """Rotate a 2-vector by `angle`."""
    c, s = math.cos(angle), math.sin(angle)
    v = np.asarray(v, dtype=float)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def to_frame(point, frame: Pose2) -> np.ndarray:
    """Express a global xy point in the given frame."""
    p = np.asarray(point, dtype=float)
    return rotate(p - frame.position, -frame.theta)


def from_frame(point, frame: Pose2) -> np.ndarray:
    """Express a frame-local xy point in global coordinates."""
    return rotate(point, frame.theta) + frame.position


def relative_polar(point, frame: Pose2) -> Polar:
    """Range and bearing of a global point seen from the frame."""
    p = np.asarray(point, dtype=float)
    d = p - frame.position
    r = float(np.hypot(d[0], d[1]))
    return Polar(r, math.atan2(d[1], d[0]) - frame.theta)


def line_of_sight(grid: "GridMap", a, b) -> bool:
    """True iff no occupied cell intersects the segment a -> b.

    The endpoints' own cells are exempt, which keeps the result symmetric.
    Raises ValueError for out-of-bounds endpoints.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for p in (a, b):
        if not grid.in_bounds(p):
            raise ValueError(f"point {p} outside map bounds")
    ox, oy = grid.origin
    clear = rays_clear(
        a[0] - ox,
        a[1] - oy,
        np.array([b[0] - ox]),
        np.array([b[1] - oy]),
        grid.cells,
        grid.resolution,
    )
    return bool(clear[0])


def line_of_sight_batch(grid: "GridMap", a, bs) -> np.ndarray:
    """Vectorized line_of_sight from one origin to many in-bounds endpoints."""
    a = np.asarray(a, dtype=float)
    bs = np.asarray(bs, dtype=float).reshape(-1, 2)
    if not grid.in_bounds(a):
        raise ValueError(f"point {a} outside map bounds")
    ox, oy = grid.origin
    return rays_clear(
        a[0] - ox,
        a[1] - oy,
        np.ascontiguousarray(bs[:, 0] - ox),
        np.ascontiguousarray(bs[:, 1] - oy),
        grid.cells,
        grid.resolution,
    )


def closest_obstacle(
    grid: "GridMap",
    pose: Pose2,
    search_radius: float = DEFAULT_OBSTACLE_SEARCH_RADIUS,
) -> Optional[Polar]:
    """Nearest occupied-cell center within search_radius, in the pose frame.

    Returns None when no occupied cell lies within the radius.
    """
    tree = grid.obstacle_tree
    if tree is None:
        return None
    d, idx = tree.query((pose.x1, pose.x2), k=1, distance_upper_bound=search_radius)
    if not np.isfinite(d) or d > search_radius:
        return None
    cx, cy = grid.occupied_centers[idx]
    return Polar(float(d), math.atan2(cy - pose.x2, cx - pose.x1) - pose.theta)
