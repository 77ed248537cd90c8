"""Grid ray traversal kernel (Amanatides-Woo voxel walk), numba-compiled.

Coordinates are relative to the grid origin; cell (i, j) covers
[i*res, (i+1)*res) x [j*res, (j+1)*res). Both endpoints' own cells are
exempt from the occupancy test (keeps the result symmetric in the
endpoints). Out-of-grid cells count as occupied.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def ray_clear_single(ax, ay, bx, by, occ, res):
    """Scalar variant of rays_clear for hot per-ray call sites."""
    nx, ny = occ.shape
    ix = int(ax // res)
    iy = int(ay // res)
    jx = int(bx // res)
    jy = int(by // res)
    sx0 = ix
    sy0 = iy
    dx = bx - ax
    dy = by - ay
    stepx = 1 if dx > 0 else -1
    stepy = 1 if dy > 0 else -1
    if dx != 0.0:
        tdx = abs(res / dx)
        edge_x = (ix + 1) * res if dx > 0 else ix * res
        tmx = (edge_x - ax) / dx
    else:
        tdx = np.inf
        tmx = np.inf
    if dy != 0.0:
        tdy = abs(res / dy)
        edge_y = (iy + 1) * res if dy > 0 else iy * res
        tmy = (edge_y - ay) / dy
    else:
        tdy = np.inf
        tmy = np.inf
    while True:
        start_or_end = (ix == sx0 and iy == sy0) or (ix == jx and iy == jy)
        if not start_or_end:
            if ix < 0 or ix >= nx or iy < 0 or iy >= ny or occ[ix, iy]:
                return False
        if ix == jx and iy == jy:
            return True
        if tmx < tmy:
            if tmx > 1.0:
                return True
            ix += stepx
            tmx += tdx
        elif tmy < tmx:
            if tmy > 1.0:
                return True
            iy += stepy
            tmy += tdy
        else:
            if tmx > 1.0:
                return True
            ix += stepx
            iy += stepy
            tmx += tdx
            tmy += tdy


@njit(cache=True)
def rays_clear(ax, ay, bxs, bys, occ, res):
    """For each endpoint (bxs[k], bys[k]), walk the segment from (ax, ay)
    and report True iff no occupied cell is crossed in between."""
    n = bxs.shape[0]
    out = np.ones(n, dtype=np.bool_)
    nx, ny = occ.shape
    for k in range(n):
        bx = bxs[k]
        by = bys[k]
        ix = int(ax // res)
        iy = int(ay // res)
        jx = int(bx // res)
        jy = int(by // res)
        sx0 = ix
        sy0 = iy
        dx = bx - ax
        dy = by - ay
        stepx = 1 if dx > 0 else -1
        stepy = 1 if dy > 0 else -1
        if dx != 0.0:
            tdx = abs(res / dx)
            edge_x = (ix + 1) * res if dx > 0 else ix * res
            tmx = (edge_x - ax) / dx
        else:
            tdx = np.inf
            tmx = np.inf
        if dy != 0.0:
            tdy = abs(res / dy)
            edge_y = (iy + 1) * res if dy > 0 else iy * res
            tmy = (edge_y - ay) / dy
        else:
            tdy = np.inf
            tmy = np.inf
        while True:
            start_or_end = (ix == sx0 and iy == sy0) or (ix == jx and iy == jy)
            if not start_or_end:
                if ix < 0 or ix >= nx or iy < 0 or iy >= ny or occ[ix, iy]:
                    out[k] = False
                    break
            if ix == jx and iy == jy:
                break
            if tmx < tmy:
                if tmx > 1.0:
                    break
                ix += stepx
                tmx += tdx
            elif tmy < tmx:
                if tmy > 1.0:
                    break
                iy += stepy
                tmy += tdy
            else:
                # exact corner crossing: advance diagonally; the two cells
                # touched only at the corner point are not interior-crossed
                if tmx > 1.0:
                    break
                ix += stepx
                iy += stepy
                tmx += tdx
                tmy += tdy
    return out
