"""Occupancy maps: random generation from polygon sets, visit-frequency
grid, egocentric window extraction, and the map JSON format."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from shapely import affinity, contains_xy
from shapely.geometry import Polygon

from .geom import Pose2

MAP_SIZE_CELLS = 181
MAP_RESOLUTION = 0.4  # meters per cell; 181 * 0.4 = 72.4 m

WINDOW_CELLS = 25
WINDOW_EXTENT = 10.0  # meters, per window
# Agent-frame centers of the five egocentric windows: on-agent, forward,
# left, behind, right (a cross tiling the 30 m surrounding area).
WINDOW_CENTERS = ((0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (-10.0, 0.0), (0.0, -10.0))

OBSTACLE_VALUE = -1.0


@dataclass
class GridMap:
    """Binary occupancy grid. cells[ix, iy] indexes x-major; cell (i, j)
    covers [i, i+1) x [j, j+1) in resolution units from `origin` (the
    lower corner of cell (0, 0)). Outside the grid counts as occupied.
    Immutable after construction (cached geometry assumes it)."""

    resolution: float
    cells: np.ndarray
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    obstacle_set: Optional[str] = None
    seed: Optional[int] = None

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=bool)
        self.origin = np.asarray(self.origin, dtype=float)

    @property
    def width(self) -> int:
        return self.cells.shape[0]

    @property
    def height(self) -> int:
        return self.cells.shape[1]

    @property
    def extent(self) -> np.ndarray:
        return np.array([self.width, self.height]) * self.resolution

    @cached_property
    def occupied_centers(self) -> np.ndarray:
        idx = np.argwhere(self.cells)
        return (idx + 0.5) * self.resolution + self.origin

    @cached_property
    def obstacle_tree(self) -> Optional[cKDTree]:
        pts = self.occupied_centers
        if pts.shape[0] == 0:
            return None
        return cKDTree(pts)

    @cached_property
    def center_clearance(self) -> np.ndarray:
        """Per-cell distance (meters) from the cell center to the nearest
        occupied-cell center; inf when the map has no obstacles."""
        if not self.cells.any():
            return np.full(self.cells.shape, math.inf)
        from scipy.ndimage import distance_transform_edt

        return distance_transform_edt(~self.cells) * self.resolution

    def in_bounds(self, p) -> bool:
        rel = np.asarray(p, dtype=float) - self.origin
        ext = self.extent
        return bool(0.0 <= rel[0] < ext[0] and 0.0 <= rel[1] < ext[1])

    def cell_index(self, p) -> tuple:
        rel = (np.asarray(p, dtype=float) - self.origin) / self.resolution
        return int(rel[0]), int(rel[1])

    def cell_center(self, ix: int, iy: int) -> np.ndarray:
        return (np.array([ix, iy]) + 0.5) * self.resolution + self.origin

    def is_occupied_at(self, p) -> bool:
        """Occupancy at a point; out-of-bounds counts as occupied."""
        if not self.in_bounds(p):
            return True
        ix, iy = self.cell_index(p)
        return bool(self.cells[ix, iy])

    def clearance(self, p) -> float:
        """Distance from a point to the nearest occupied-cell center."""
        tree = self.obstacle_tree
        if tree is None:
            return math.inf
        d, _ = tree.query(np.asarray(p, dtype=float), k=1)
        return float(d)

    def clearance_batch(self, pts) -> np.ndarray:
        tree = self.obstacle_tree
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if tree is None:
            return np.full(pts.shape[0], math.inf)
        d, _ = tree.query(pts, k=1)
        return d


@dataclass
class VisitGrid:
    """Per-cell visit-frequency values in [0, 1], same geometry as the
    occupancy grid it was built for."""

    resolution: float
    lam: np.ndarray
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @classmethod
    def zeros_like(cls, grid: GridMap) -> "VisitGrid":
        return cls(grid.resolution, np.zeros((grid.width, grid.height)), grid.origin.copy())


@dataclass
class ObstacleSet:
    """Named collection of simple (possibly concave) polygons, vertices in
    meters around each polygon's local origin."""

    tag: str
    polygons: List[np.ndarray]

    def __post_init__(self):
        for i, verts in enumerate(self.polygons):
            verts = np.asarray(verts, dtype=float)
            poly = Polygon(verts)
            if not poly.is_valid:
                raise ValueError(f"polygon {i} in set '{self.tag}' is not simple")
            self.polygons[i] = verts


def load_obstacle_set(tag: str) -> ObstacleSet:
    """Load a packaged obstacle set ('train' or 'unseen')."""
    data = resources.files("ttrk.data").joinpath(f"obstacles_{tag}.json").read_text()
    raw = json.loads(data)
    return ObstacleSet(raw["tag"], [np.asarray(p["vertices"]) for p in raw["polygons"]])


def _circumradius(verts: np.ndarray) -> float:
    centroid = np.asarray(Polygon(verts).centroid.coords[0])
    return float(np.max(np.linalg.norm(verts - centroid, axis=1)))


def generate_map(
    seed: int,
    obstacle_set: Optional[ObstacleSet],
    n_obstacles: int = 4,
    size_cells: int = MAP_SIZE_CELLS,
    resolution: float = MAP_RESOLUTION,
) -> GridMap:
    """Random map: `n_obstacles` polygons sampled with replacement, one per
    quadrant center, each at a uniformly random orientation."""
    cells = np.zeros((size_cells, size_cells), dtype=bool)
    extent = size_cells * resolution
    grid = GridMap(
        resolution,
        cells,
        obstacle_set=obstacle_set.tag if obstacle_set else None,
        seed=seed,
    )
    if n_obstacles == 0:
        return grid
    if obstacle_set is None or not obstacle_set.polygons:
        raise ValueError("non-empty obstacle set required when n_obstacles > 0")
    for verts in obstacle_set.polygons:
        if _circumradius(verts) > extent / 4.0:
            raise ValueError("obstacle larger than a map quadrant")

    quadrant_centers = [
        (extent * 0.25, extent * 0.25),
        (extent * 0.75, extent * 0.25),
        (extent * 0.25, extent * 0.75),
        (extent * 0.75, extent * 0.75),
    ]
    rng = np.random.default_rng(seed)
    for q in range(min(n_obstacles, 4)):
        pick = int(rng.integers(len(obstacle_set.polygons)))
        angle = float(rng.uniform(-math.pi, math.pi))
        poly = Polygon(obstacle_set.polygons[pick])
        poly = affinity.rotate(poly, angle, origin="centroid", use_radians=True)
        cx, cy = poly.centroid.coords[0]
        poly = affinity.translate(poly, quadrant_centers[q][0] - cx, quadrant_centers[q][1] - cy)
        _stamp(cells, poly, resolution)
    return grid


def _stamp(cells: np.ndarray, poly: Polygon, resolution: float) -> None:
    """Mark cells whose centers fall inside the polygon."""
    minx, miny, maxx, maxy = poly.bounds
    i0 = max(int(minx / resolution) - 1, 0)
    j0 = max(int(miny / resolution) - 1, 0)
    i1 = min(int(maxx / resolution) + 2, cells.shape[0])
    j1 = min(int(maxy / resolution) + 2, cells.shape[1])
    if i0 >= i1 or j0 >= j1:
        return
    ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="ij")
    xs = (ii + 0.5) * resolution
    ys = (jj + 0.5) * resolution
    inside = contains_xy(poly, xs.ravel(), ys.ravel()).reshape(xs.shape)
    cells[i0:i1, j0:j1] |= inside


def update_visit_frequency(
    vg: VisitGrid,
    scanned: np.ndarray,
    vbar: float,
    tau: float,
    r_sensor: float,
    c_f: float,
) -> VisitGrid:
    """Freshly scanned cells become 1.0; all others decay by
    c_f * exp(-vbar * tau / r_sensor). Values clamped to [0, 1].

    `scanned` is an (N, 2) integer array of (ix, iy) cell indices.
    """
    decay = c_f * math.exp(-vbar * tau / r_sensor)
    lam = vg.lam * decay
    scanned = np.asarray(scanned, dtype=int).reshape(-1, 2)
    if scanned.shape[0]:
        lam[scanned[:, 0], scanned[:, 1]] = 1.0
    np.clip(lam, 0.0, 1.0, out=lam)
    return VisitGrid(vg.resolution, lam, vg.origin)


def extract_egocentric(grid: GridMap, vg: VisitGrid, pose: Pose2) -> np.ndarray:
    """Five 25x25 windows sampled in the agent frame (nearest map cell per
    sample point). Occupied or out-of-map samples get -1, free cells their
    visit value. Returns a (25, 25, 5) stack; stack[i, j, k] is the sample
    at window k, agent-frame offset ((i-12)*0.4, (j-12)*0.4) from its center."""
    step = WINDOW_EXTENT / WINDOW_CELLS
    offs = (np.arange(WINDOW_CELLS) - (WINDOW_CELLS - 1) / 2.0) * step
    u, v = np.meshgrid(offs, offs, indexing="ij")
    centers = np.asarray(WINDOW_CENTERS)
    # (5, 25, 25) local sample coordinates
    lx = centers[:, 0, None, None] + u[None]
    ly = centers[:, 1, None, None] + v[None]
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    gx = c * lx - s * ly + pose.x1
    gy = s * lx + c * ly + pose.x2
    ix = np.floor((gx - grid.origin[0]) / grid.resolution).astype(int)
    iy = np.floor((gy - grid.origin[1]) / grid.resolution).astype(int)
    valid = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    ixc = np.clip(ix, 0, grid.width - 1)
    iyc = np.clip(iy, 0, grid.height - 1)
    blocked = ~valid | grid.cells[ixc, iyc]
    values = np.where(blocked, OBSTACLE_VALUE, vg.lam[ixc, iyc])
    return np.ascontiguousarray(np.transpose(values, (1, 2, 0)))


def rle_encode(flat: np.ndarray) -> List[int]:
    """Run lengths of a boolean array, alternating and starting with zeros."""
    flat = np.asarray(flat, dtype=bool).ravel()
    if flat.size == 0:
        return []
    change = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: Sequence[int], size: int) -> np.ndarray:
    flat = np.zeros(size, dtype=bool)
    pos = 0
    value = False
    for r in runs:
        if value:
            flat[pos : pos + r] = True
        pos += r
        value = not value
    if pos != size:
        raise ValueError("run-length data does not match grid size")
    return flat


def save_map(grid: GridMap, path) -> None:
    doc = {
        "version": 1,
        "resolution": grid.resolution,
        "width": grid.width,
        "height": grid.height,
        "origin": grid.origin.tolist(),
        "occupied_rle": rle_encode(grid.cells),
        "obstacle_set": grid.obstacle_set,
        "seed": grid.seed,
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True)


def load_map(path) -> GridMap:
    with open(path) as f:
        doc = json.load(f)
    cells = rle_decode(doc["occupied_rle"], doc["width"] * doc["height"])
    return GridMap(
        doc["resolution"],
        cells.reshape(doc["width"], doc["height"]),
        np.asarray(doc["origin"]),
        doc.get("obstacle_set"),
        doc.get("seed"),
    )
