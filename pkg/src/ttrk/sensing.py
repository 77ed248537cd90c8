"""Range-bearing sensing with range, field-of-view, and occlusion gates."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Tuple

import numpy as np

from .geom import Pose2, line_of_sight, line_of_sight_batch, wrap_angle

if TYPE_CHECKING:
    from .dynamics import TargetState
    from .worldmap import GridMap

_MIN_RANGE = 1e-6


@dataclass(frozen=True)
class SensorParams:
    r_sensor: float = 10.0
    fov: float = 2.0 * math.pi / 3.0
    v_diag: Tuple[float, float] = (0.2, 0.01)

    @property
    def V(self) -> np.ndarray:
        return np.diag(self.v_diag)


@dataclass(frozen=True)
class Measurement:
    target_id: int
    r: float
    alpha: float


def h(x: Pose2, y_pos) -> Tuple[float, float]:
    """Noise-free range and bearing of a point from the sensor pose."""
    y_pos = np.asarray(y_pos, dtype=float)
    d1 = y_pos[0] - x.x1
    d2 = y_pos[1] - x.x2
    r = math.hypot(d1, d2)
    if r == 0.0:
        raise ValueError("measurement of a point coincident with the sensor")
    return r, float(wrap_angle(math.atan2(d2, d1) - x.theta))


def observable(x: Pose2, y_pos, grid: "GridMap", sp: SensorParams) -> bool:
    """In range, inside the field of view, and not occluded."""
    y_pos = np.asarray(y_pos, dtype=float)
    if not grid.in_bounds(y_pos):
        return False
    d1 = y_pos[0] - x.x1
    d2 = y_pos[1] - x.x2
    if math.hypot(d1, d2) > sp.r_sensor:
        return False
    alpha = wrap_angle(math.atan2(d2, d1) - x.theta)
    if abs(alpha) > sp.fov / 2.0:
        return False
    return line_of_sight(grid, (x.x1, x.x2), y_pos)


def measure(
    x: Pose2,
    y: "TargetState",
    grid: "GridMap",
    sp: SensorParams,
    rng: np.random.Generator,
    target_id: int = 0,
) -> Optional[Measurement]:
    """Noisy measurement of a target, or None when it is not observable.

    Fixed draw order (range noise then bearing noise); the noisy range is
    clamped positive.
    """
    pos = y.position
    if not observable(x, pos, grid, sp):
        return None
    r, alpha = h(x, pos)
    r += math.sqrt(sp.v_diag[0]) * rng.standard_normal()
    alpha += math.sqrt(sp.v_diag[1]) * rng.standard_normal()
    return Measurement(target_id, max(r, _MIN_RANGE), float(wrap_angle(alpha)))


def scanned_cells(x: Pose2, grid: "GridMap", sp: SensorParams) -> np.ndarray:
    """Indices (N, 2) of all cells whose centers are observable from x."""
    res = grid.resolution
    rel = np.asarray([x.x1, x.x2]) - grid.origin
    reach = int(math.ceil(sp.r_sensor / res)) + 1
    cx, cy = int(rel[0] // res), int(rel[1] // res)
    i0, i1 = max(cx - reach, 0), min(cx + reach + 1, grid.width)
    j0, j1 = max(cy - reach, 0), min(cy + reach + 1, grid.height)
    if i0 >= i1 or j0 >= j1:
        return np.empty((0, 2), dtype=int)
    ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="ij")
    centers_x = (ii + 0.5) * res + grid.origin[0]
    centers_y = (jj + 0.5) * res + grid.origin[1]
    dx = centers_x - x.x1
    dy = centers_y - x.x2
    in_range = np.hypot(dx, dy) <= sp.r_sensor
    bearing = wrap_angle(np.arctan2(dy, dx) - x.theta)
    in_fov = np.abs(bearing) <= sp.fov / 2.0
    cand = in_range & in_fov
    idx = np.stack([ii[cand], jj[cand]], axis=1)
    if idx.shape[0] == 0:
        return idx
    centers = np.stack([centers_x[cand], centers_y[cand]], axis=1)
    clear = line_of_sight_batch(grid, (x.x1, x.x2), centers)
    return idx[clear]
