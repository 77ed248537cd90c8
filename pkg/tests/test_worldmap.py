import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from shapely.geometry import Polygon

from ttrk.geom import Pose2
from ttrk.worldmap import (
    MAP_RESOLUTION,
    MAP_SIZE_CELLS,
    GridMap,
    ObstacleSet,
    VisitGrid,
    extract_egocentric,
    generate_map,
    load_map,
    load_obstacle_set,
    rle_decode,
    rle_encode,
    save_map,
    update_visit_frequency,
)

from conftest import make_grid


def test_map_dimensions():
    assert MAP_SIZE_CELLS * MAP_RESOLUTION == pytest.approx(72.4, abs=1e-9)


def test_packaged_obstacle_sets_valid():
    for tag in ("train", "unseen"):
        oset = load_obstacle_set(tag)
        assert oset.tag == tag
        assert len(oset.polygons) >= 4
        concave = 0
        for verts in oset.polygons:
            poly = Polygon(verts)
            assert poly.is_valid
            concave += int(poly.convex_hull.area > poly.area + 1e-9)
        assert concave >= 1  # mixes convex and concave shapes


def test_generate_map_zero_obstacles(train_set):
    grid = generate_map(0, train_set, n_obstacles=0)
    assert grid.cells.sum() == 0


def test_generate_map_deterministic(train_set):
    g1 = generate_map(123, train_set)
    g2 = generate_map(123, train_set)
    assert np.array_equal(g1.cells, g2.cells)
    assert g1.cells.sum() > 0


def test_generate_map_occupancy_within_quadrant_bounds(train_set):
    # geometric bound: occupied cells only within each quadrant center
    # inflated by the largest polygon circumradius
    radii = []
    for verts in train_set.polygons:
        c = np.asarray(Polygon(verts).centroid.coords[0])
        radii.append(np.max(np.linalg.norm(verts - c, axis=1)))
    max_rad = max(radii)
    for seed in range(8):
        grid = generate_map(seed, train_set)
        ext = grid.extent[0]
        centers = grid.occupied_centers
        qcs = np.array(
            [[ext * a, ext * b] for a in (0.25, 0.75) for b in (0.25, 0.75)]
        )
        d = np.linalg.norm(centers[:, None, :] - qcs[None], axis=2).min(axis=1)
        assert np.all(d <= max_rad + grid.resolution)


def test_generate_map_rejects_oversized_obstacle():
    big = ObstacleSet("big", [np.array([[-20, -20], [20, -20], [20, 20], [-20, 20]])])
    with pytest.raises(ValueError, match="larger than"):
        generate_map(0, big)


def test_generate_map_requires_polygons():
    with pytest.raises(ValueError):
        generate_map(0, None, n_obstacles=4)


def test_visit_frequency_scanned_cells_become_one():
    vg = VisitGrid(0.4, np.full((8, 8), 0.3))
    out = update_visit_frequency(vg, np.array([[2, 3], [4, 4]]), 1.0, 0.5, 10.0, 0.95)
    assert out.lam[2, 3] == 1.0
    assert out.lam[4, 4] == 1.0


def test_visit_frequency_no_decay_at_zero_speed():
    vg = VisitGrid(0.4, np.full((8, 8), 0.42))
    out = update_visit_frequency(vg, np.empty((0, 2)), 0.0, 0.5, 10.0, 1.0)
    assert np.array_equal(out.lam, vg.lam)


def test_visit_frequency_decay_value():
    # 0.95 * exp(-2.0 * 0.5 / 10) evaluated independently at 30 digits
    # (mpmath): 0.859595547134161594506036606474
    vg = VisitGrid(0.4, np.ones((4, 4)))
    out = update_visit_frequency(vg, np.empty((0, 2)), 2.0, 0.5, 10.0, 0.95)
    assert out.lam[0, 0] == pytest.approx(0.8595955471341616, abs=1e-12)
    assert round(float(out.lam[0, 0]), 4) == 0.8596  # ~0.8596 to 4 decimals


@given(
    st.floats(0.0, 10.0),
    st.floats(0.01, 2.0),
    st.floats(0.0, 1.0),
)
def test_visit_frequency_bounds_and_monotone(vbar, tau, c_f):
    lam0 = np.linspace(0.0, 1.0, 16).reshape(4, 4)
    vg = VisitGrid(0.4, lam0.copy())
    out = update_visit_frequency(vg, np.array([[0, 0]]), vbar, tau, 10.0, c_f)
    assert np.all(out.lam >= 0.0) and np.all(out.lam <= 1.0)
    mask = np.ones((4, 4), dtype=bool)
    mask[0, 0] = False
    assert np.all(out.lam[mask] <= lam0[mask])  # decay factor <= 1 here


def test_egocentric_all_zero_on_empty_map():
    grid = make_grid(size=181, resolution=0.4)
    vg = VisitGrid.zeros_like(grid)
    stack = extract_egocentric(grid, vg, Pose2(36.2, 36.2, 0.7))
    assert stack.shape == (25, 25, 5)
    assert np.all(stack == 0.0)


def test_egocentric_forward_window_sees_obstacle():
    # cell (115, 90) center is (46.2, 36.2): 10 m ahead of the map center
    grid = make_grid(size=181, resolution=0.4, occupied=[(115, 90)])
    vg = VisitGrid.zeros_like(grid)
    stack = extract_egocentric(grid, vg, Pose2(36.2, 36.2, 0.0))
    assert stack[12, 12, 1] == -1.0  # center of the forward window
    assert np.all(stack[:, :, 0] == 0.0)  # on-agent window clean


def test_egocentric_rotation_equivariance():
    rng = np.random.default_rng(5)
    size = 181
    cells = np.zeros((size, size), dtype=bool)
    occ = rng.integers(60, 120, size=(40, 2))
    cells[occ[:, 0], occ[:, 1]] = True
    lam = np.round(rng.uniform(0, 1, (size, size)), 3)
    lam[cells] = 0.0

    grid = GridMap(0.4, cells)
    vg = VisitGrid(0.4, lam)
    # generic pose: exact-gridline positions are not floor-equivariant
    pose = Pose2(30.13, 40.07, 0.3)
    stack = extract_egocentric(grid, vg, pose)

    # rotate map contents and the pose together by pi/2 about the map center
    cells_rot = cells.T[::-1].copy()
    lam_rot = lam.T[::-1].copy()
    center = np.array([36.2, 36.2])
    rel = pose.position - center
    new_pos = center + np.array([-rel[1], rel[0]])
    pose_rot = Pose2(new_pos[0], new_pos[1], pose.theta + math.pi / 2)
    stack_rot = extract_egocentric(GridMap(0.4, cells_rot), VisitGrid(0.4, lam_rot), pose_rot)

    assert np.array_equal(stack, stack_rot)


def test_egocentric_out_of_map_is_obstacle():
    grid = make_grid(size=181, resolution=0.4)
    vg = VisitGrid.zeros_like(grid)
    stack = extract_egocentric(grid, vg, Pose2(1.0, 36.2, math.pi))
    # forward window (channel 1) is centered 10 m ahead: off the map
    assert np.all(stack[:, :, 1] == -1.0)


@given(st.lists(st.booleans(), min_size=0, max_size=64))
def test_rle_round_trip(bits):
    arr = np.asarray(bits, dtype=bool)
    runs = rle_encode(arr)
    assert np.array_equal(rle_decode(runs, arr.size), arr)


def test_map_save_load_round_trip(tmp_path, train_set):
    grid = generate_map(99, train_set)
    path = tmp_path / "map.json"
    save_map(grid, path)
    loaded = load_map(path)
    assert np.array_equal(loaded.cells, grid.cells)
    assert loaded.resolution == grid.resolution
    assert loaded.obstacle_set == "train"
    assert loaded.seed == 99
