"""Deterministic SVG rendering: trajectories, heat grids, and the
obstacle-repulsion arrow field. Plain string assembly, fixed float
formatting, no timestamps: identical inputs give identical bytes."""
from __future__ import annotations

import math
from typing import List, Optional, Sequence

import numpy as np

from .dynamics import TargetParams, TargetState, zeta
from .env import EpisodeLog
from .geom import Pose2, closest_obstacle
from .worldmap import GridMap, generate_map, load_obstacle_set


def _f(x: float) -> str:
    return f"{x:.3f}"


class Svg:
    def __init__(self, width: float, height: float):
        self.width = width
        self.height = height
        self.parts: List[str] = []

    def rect(self, x, y, w, h, fill, opacity=None):
        op = f' fill-opacity="{_f(opacity)}"' if opacity is not None else ""
        self.parts.append(
            f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" fill="{fill}"{op}/>'
        )

    def circle(self, cx, cy, r, fill, stroke=None):
        st = f' stroke="{stroke}" fill="none"' if stroke else f' fill="{fill}"'
        self.parts.append(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(r)}"{st}/>')

    def line(self, x1, y1, x2, y2, stroke, width=1.0):
        self.parts.append(
            f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
            f'stroke="{stroke}" stroke-width="{_f(width)}"/>'
        )

    def polyline(self, points, stroke, width=1.0):
        pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in points)
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{stroke}" stroke-width="{_f(width)}"/>'
        )

    def polygon(self, points, fill):
        pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in points)
        self.parts.append(f'<polygon points="{pts}" fill="{fill}"/>')

    def to_string(self) -> str:
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(self.width)}" '
            f'height="{_f(self.height)}" viewBox="0 0 {_f(self.width)} {_f(self.height)}">'
        )
        return head + "".join(self.parts) + "</svg>"


class _WorldView:
    """World (y up) to SVG (y down) mapping."""

    def __init__(self, extent_x: float, extent_y: float, scale: float = 8.0):
        self.scale = scale
        self.extent_y = extent_y
        self.svg = Svg(extent_x * scale, extent_y * scale)

    def pt(self, x, y):
        return x * self.scale, (self.extent_y - y) * self.scale

    def cell_rect(self, grid: GridMap, ix, iy, fill, opacity=None):
        x0 = grid.origin[0] + ix * grid.resolution
        y0 = grid.origin[1] + (iy + 1) * grid.resolution
        px, py = self.pt(x0, y0)
        s = grid.resolution * self.scale
        self.svg.rect(px, py, s, s, fill, opacity)


def _draw_obstacles(view: _WorldView, grid: GridMap) -> None:
    for ix, iy in np.argwhere(grid.cells):
        view.cell_rect(grid, int(ix), int(iy), "#222222")


def trajectory_svg(log: EpisodeLog, grid: GridMap) -> str:
    """Map, agent path, per-target true paths, and belief mean paths."""
    ext = grid.extent
    view = _WorldView(ext[0], ext[1])
    view.svg.rect(0, 0, view.svg.width, view.svg.height, "#f8f8f8")
    _draw_obstacles(view, grid)
    recs = sorted(log.records, key=lambda r: r["t"])
    agent = [view.pt(r["pose"][0], r["pose"][1]) for r in recs]
    view.svg.polyline(agent, "#1f4fd8", 1.5)
    n = len(recs[0]["targets"])
    for i in range(n):
        tpath = [view.pt(r["targets"][i][0], r["targets"][i][1]) for r in recs]
        bpath = [view.pt(r["beliefs"][i]["mean"][0], r["beliefs"][i]["mean"][1]) for r in recs]
        view.svg.polyline(tpath, "#d8341f", 1.5)
        view.svg.polyline(bpath, "#2a9d3a", 1.0)
        view.svg.circle(*tpath[0], 4.0, "#d8341f")
    view.svg.circle(*agent[0], 4.0, "#1f4fd8")
    return view.svg.to_string()


def heat_svg(values: np.ndarray, resolution: float = 1.0, scale: float = 8.0) -> str:
    """Gray-scale heat grid of values in [0, 1]; index (ix, iy) is x-major
    with y up, matching the map convention."""
    w, h = values.shape
    view = _WorldView(w * resolution, h * resolution, scale / max(resolution, 1e-9) * resolution)
    view.svg.rect(0, 0, view.svg.width, view.svg.height, "#ffffff")
    step = resolution * view.scale
    for ix, iy in np.argwhere(values > 0):
        v = float(values[ix, iy])
        shade = int(round(255 * (1.0 - 0.9 * min(v, 1.0))))
        px, py = view.pt(ix * resolution, (iy + 1) * resolution)
        view.svg.rect(px, py, step, step, f"rgb({shade},{shade},{shade})")
    return view.svg.to_string()


# -- obstacle-repulsion arrow field ---------------------------------------


def zeta_field_data(
    tau: float = 0.5,
    nu_max: float = 3.0,
    r_margin: float = 0.1,
    r_min: float = 1.0,
    heading: float = -3 * math.pi / 4,
    speeds: Sequence[float] = (1.0, 3.0),
    stride: int = 2,
):
    """Repulsion vectors over a grid of target positions around a block
    obstacle, for each test speed. Verifies that every arrow points away
    from its closest obstacle and that magnitude grows with speed."""
    size = 40
    res = 0.5
    cells = np.zeros((size, size), dtype=bool)
    cells[16:22, 16:22] = True  # 3 m x 3 m block mid-field
    grid = GridMap(res, cells)
    params = {
        s: TargetParams(q=0.5, nu_max=nu_max, r_margin=r_margin, r_min=r_min, tau=tau)
        for s in speeds
    }
    arrows = []
    for ix in range(0, size, stride):
        for iy in range(0, size, stride):
            if cells[ix, iy]:
                continue
            pos = grid.cell_center(ix, iy)
            mags = {}
            for s in speeds:
                vel = s * np.array([math.cos(heading), math.sin(heading)])
                y = TargetState.make(pos[0], pos[1], vel[0], vel[1])
                vec = zeta(y, grid, params[s])[2:]
                mags[s] = float(np.hypot(vec[0], vec[1]))
                if mags[s] == 0.0:
                    continue
                ob = closest_obstacle(grid, Pose2(pos[0], pos[1], heading))
                ob_pt = pos + ob.r * np.array(
                    [math.cos(heading + ob.angle), math.sin(heading + ob.angle)]
                )
                if float(vec @ (pos - ob_pt)) < 0.0:
                    raise ValueError(f"repulsion toward obstacle at {pos}")
                arrows.append({"pos": pos.tolist(), "vec": vec.tolist(), "speed": s})
            smin, smax = min(speeds), max(speeds)
            if mags[smax] < mags[smin] - 1e-12:
                raise ValueError(f"repulsion magnitude not increasing with speed at {pos}")
    return {"grid": grid, "arrows": arrows, "speeds": list(speeds)}


def zeta_field_svg(data: Optional[dict] = None) -> str:
    data = data or zeta_field_data()
    grid = data["grid"]
    ext = grid.extent
    view = _WorldView(ext[0], ext[1], scale=20.0)
    view.svg.rect(0, 0, view.svg.width, view.svg.height, "#ffffff")
    _draw_obstacles(view, grid)
    smax = max(data["speeds"])
    for arrow in data["arrows"]:
        color = "#1f4fd8" if arrow["speed"] == smax else "#d8341f"
        x, y = arrow["pos"]
        vx, vy = arrow["vec"]
        gain = 1.2
        tip = (x + gain * vx, y + gain * vy)
        view.svg.line(*view.pt(x, y), *view.pt(*tip), color, 1.2)
        ang = math.atan2(vy, vx)
        head = 0.18
        for side in (2.6, -2.6):
            hx = tip[0] - head * math.cos(ang + side / math.pi)
            hy = tip[1] - head * math.sin(ang + side / math.pi)
            view.svg.line(*view.pt(*tip), *view.pt(hx, hy), color, 1.2)
    return view.svg.to_string()
