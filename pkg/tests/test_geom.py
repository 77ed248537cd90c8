import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttrk.geom import (
    Polar,
    Pose2,
    closest_obstacle,
    from_frame,
    line_of_sight,
    to_frame,
    wrap_angle,
)

from conftest import make_grid

finite_coord = st.floats(-50.0, 50.0, allow_nan=False)
any_angle = st.floats(-10.0, 10.0, allow_nan=False)


def test_wrap_angle_range():
    for a in np.linspace(-20, 20, 401):
        w = wrap_angle(a)
        assert -math.pi <= w < math.pi


def test_pose_theta_normalized():
    assert Pose2(0, 0, math.pi).theta == pytest.approx(-math.pi)
    assert Pose2(0, 0, 3 * math.pi / 2).theta == pytest.approx(-math.pi / 2)


def test_polar_rejects_negative_range():
    with pytest.raises(ValueError):
        Polar(-0.1, 0.0)


def test_to_frame_identity():
    out = to_frame((3.0, 4.0), Pose2(0, 0, 0))
    assert np.allclose(out, [3.0, 4.0])


def test_to_frame_hand_rotation():
    out = to_frame((1.0, 1.0), Pose2(1.0, 0.0, math.pi / 2))
    assert np.allclose(out, [1.0, 0.0], atol=1e-12)


@given(finite_coord, finite_coord, finite_coord, finite_coord, any_angle)
def test_frame_round_trip(px, py, fx, fy, theta):
    frame = Pose2(fx, fy, theta)
    back = from_frame(to_frame((px, py), frame), frame)
    assert np.max(np.abs(back - [px, py])) < 1e-12


def test_line_of_sight_empty_map(empty_grid):
    rng = np.random.default_rng(0)
    ext = empty_grid.extent
    for _ in range(20):
        a = rng.uniform(0.1, ext[0] - 0.1, 2)
        b = rng.uniform(0.1, ext[0] - 0.1, 2)
        assert line_of_sight(empty_grid, a, b)


def test_line_of_sight_blocked_by_single_cell():
    grid = make_grid(size=10, resolution=1.0, occupied=[(5, 2)])
    # segment along the row of the occupied cell, endpoints either side
    assert not line_of_sight(grid, (1.5, 2.5), (8.5, 2.5))
    # one row over is clear
    assert line_of_sight(grid, (1.5, 3.5), (8.5, 3.5))


def test_line_of_sight_out_of_bounds():
    grid = make_grid(size=10, resolution=1.0)
    with pytest.raises(ValueError):
        line_of_sight(grid, (-1.0, 2.0), (5.0, 5.0))
    with pytest.raises(ValueError):
        line_of_sight(grid, (5.0, 5.0), (5.0, 11.0))


def _sampled_los(grid, a, b, n=1000):
    """Oracle: dense sampling of the segment; endpoint cells exempt."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    cell_a = grid.cell_index(a)
    cell_b = grid.cell_index(b)
    for t in np.linspace(0.0, 1.0, n):
        p = a + t * (b - a)
        c = grid.cell_index(p)
        if c == cell_a or c == cell_b:
            continue
        if grid.cells[c]:
            return False
    return True


def test_line_of_sight_matches_dense_sampling_oracle():
    grid = make_grid(size=10, resolution=1.0, occupied=[(4, 4), (4, 5), (5, 4), (5, 5)])
    rng = np.random.default_rng(42)
    for _ in range(100):
        a = rng.uniform(0.05, 9.95, 2)
        b = rng.uniform(0.05, 9.95, 2)
        assert line_of_sight(grid, a, b) == _sampled_los(grid, a, b)


def test_line_of_sight_symmetric():
    rng = np.random.default_rng(3)
    occ = [(int(i), int(j)) for i, j in rng.integers(0, 12, size=(15, 2))]
    grid = make_grid(size=12, resolution=0.7, occupied=occ)
    for _ in range(200):
        a = rng.uniform(0.05, 12 * 0.7 - 0.05, 2)
        b = rng.uniform(0.05, 12 * 0.7 - 0.05, 2)
        assert line_of_sight(grid, a, b) == line_of_sight(grid, b, a)


def test_closest_obstacle_empty(empty_grid):
    assert closest_obstacle(empty_grid, Pose2(5.0, 5.0, 0.0)) is None


def test_closest_obstacle_straight_ahead():
    # occupied cell (7, 1) center is (3.0, 0.6): 2 m ahead of the pose
    grid = make_grid(size=32, resolution=0.4, occupied=[(7, 1)])
    ob = closest_obstacle(grid, Pose2(1.0, 0.6, 0.0))
    assert ob.r == pytest.approx(2.0, abs=1e-12)
    assert ob.angle == pytest.approx(0.0, abs=1e-12)


def test_closest_obstacle_matches_exhaustive_scan():
    rng = np.random.default_rng(7)
    for trial in range(20):
        occ = [(int(i), int(j)) for i, j in rng.integers(0, 20, size=(12, 2))]
        grid = make_grid(size=20, resolution=0.5, occupied=occ)
        pose = Pose2(rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(-3, 3))
        ob = closest_obstacle(grid, pose, search_radius=100.0)
        dists = np.linalg.norm(grid.occupied_centers - pose.position, axis=1)
        assert ob.r == pytest.approx(dists.min(), abs=1e-12)


def test_closest_obstacle_monotone_under_added_obstacles():
    pose = Pose2(3.3, 3.3, 0.2)
    occupied = [(14, 14)]
    last = math.inf
    for extra in [(12, 2), (8, 8), (7, 7), (6, 7)]:
        occupied.append(extra)
        grid = make_grid(size=16, resolution=0.5, occupied=occupied)
        ob = closest_obstacle(grid, pose, search_radius=100.0)
        assert ob.r <= last + 1e-12
        last = ob.r


def test_closest_obstacle_respects_search_radius():
    grid = make_grid(size=32, resolution=0.4, occupied=[(30, 30)])
    assert closest_obstacle(grid, Pose2(0.2, 0.2, 0.0), search_radius=2.0) is None
