import pickle

import numpy as np
import pytest

from helpers import free_with, grid_from_states
from soar import oracles
from soar.world import (FREE, OCCUPIED, POINT_CAP, UNKNOWN, Ray, SceneError, Unreachable, VoxelGrid,
                        astar_path, classify_surface, distance_field, integrate_scan, load_points_csv,
                        raycast, voxelize_scene)


# voxelize_scene

def test_single_point_one_occupied_voxel():
    g = voxelize_scene([[4.5, 4.5, 4.5]], 1.0, ([0, 0, 0], [10, 10, 10]))
    assert g.dims == (10, 10, 10)
    assert np.count_nonzero(g.state == OCCUPIED) == 1
    assert g.state[4, 4, 4] == OCCUPIED


def test_empty_scene_is_all_free():
    g = voxelize_scene(np.zeros((0, 3)), 0.5, ([0, 0, 0], [5, 5, 5]))
    assert np.all(g.state == FREE)


def test_corners_of_one_voxel_interior():
    # the 8 corners of a cube strictly inside voxel (2, 3, 4)
    c = np.array([2.5, 3.5, 4.5])
    pts = [c + 0.45 * np.array([sx, sy, sz]) for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    g = voxelize_scene(pts, 1.0, ([0, 0, 0], [10, 10, 10]))
    assert np.argwhere(g.state == OCCUPIED).tolist() == [[2, 3, 4]]


def test_point_outside_bounds_names_index():
    with pytest.raises(SceneError, match="point 1"):
        voxelize_scene([[1, 1, 1], [11, 1, 1]], 1.0, ([0, 0, 0], [10, 10, 10]))


def test_degenerate_bounds_rejected():
    with pytest.raises(SceneError):
        voxelize_scene([], 1.0, ([0, 0, 0], [10, 0, 10]))
    with pytest.raises(SceneError):
        voxelize_scene([], 0.0, ([0, 0, 0], [1, 1, 1]))


# integrate_scan

def _corridor():
    return VoxelGrid.empty((0, 0, 0), 1.0, (10, 1, 1))


def test_ray_hitting_wall_five_voxels_away():
    g = _corridor()
    changed = integrate_scan(g, [0.5, 0.5, 0.5], [[4.2, 0.5, 0.5]], [])
    assert g.state[:5, 0, 0].tolist() == [FREE] * 4 + [OCCUPIED]
    assert np.all(g.state[5:] == UNKNOWN)
    assert changed == {0, 1, 2, 3, 4}
    assert g.surface[4, 0, 0]
    assert g.points[4] == [(4.2, 0.5, 0.5)]


def test_reintegrating_same_scan_changes_nothing():
    g = _corridor()
    integrate_scan(g, [0.5, 0.5, 0.5], [[4.2, 0.5, 0.5]], [[0.5, 0.5, 0.5]])
    assert integrate_scan(g, [0.5, 0.5, 0.5], [[4.2, 0.5, 0.5]], [[0.5, 0.5, 0.5]]) == set()


def test_miss_ray_frees_traversed_unknown():
    g = _corridor()
    integrate_scan(g, [0.5, 0.5, 0.5], [], [[9.9, 0.5, 0.5]])
    assert np.all(g.state == FREE)


def test_occupied_is_sticky():
    g = _corridor()
    integrate_scan(g, [0.5, 0.5, 0.5], [[4.2, 0.5, 0.5]], [])
    integrate_scan(g, [0.5, 0.5, 0.5], [], [[9.9, 0.5, 0.5]])
    assert g.state[4, 0, 0] == OCCUPIED


def test_point_store_caps_and_stays_inside_voxel():
    g = _corridor()
    rng = np.random.default_rng(3)
    hits = np.column_stack([4.0 + rng.uniform(0.01, 0.99, 200), np.full(200, 0.5), np.full(200, 0.5)])
    integrate_scan(g, [0.5, 0.5, 0.5], hits, [])
    pts = np.array(g.points[4])
    assert len(pts) == POINT_CAP
    assert g.seen[4] == 200
    assert np.all(np.floor(pts[:, 0]) == 4)


def test_surface_consistency_after_random_scans():
    truth = free_with([((3, 6), (3, 6), (0, 4)), ((8, 10), (0, 10), (0, 10))], dims=(12, 12, 8))
    g = truth.blank_copy()
    rng = np.random.default_rng(0)
    from soar.sensors import LidarParams, lidar_scan
    lp = LidarParams(max_range=8.0, azimuth_count=24, elevation_angles=(-60.0, -30.0, 0.0, 30.0, 60.0))
    before = g.state.copy()
    for _ in range(6):
        p = np.array([rng.uniform(0.5, 2.5), rng.uniform(0.5, 11.5), rng.uniform(4.5, 7.5)])
        hits, misses = lidar_scan(truth, p, rng.uniform(-3, 3), lp)
        integrate_scan(g, p, hits, misses)
        assert set(map(tuple, np.argwhere(g.surface))) == oracles.surface_bruteforce(g.state)
        # no voxel ever returns to Unknown
        assert not np.any((before != UNKNOWN) & (g.state == UNKNOWN))
        before = g.state.copy()


# classify_surface

def test_enclosed_voxel_is_not_surface():
    g = free_with([((2, 5), (2, 5), (2, 5))])
    assert classify_surface(g, [g.flat((3, 3, 3))]) == set()


def test_voxel_with_free_neighbor_is_surface():
    g = free_with([((2, 3), (2, 3), (2, 3))])
    f = g.flat((2, 2, 2))
    assert classify_surface(g, [f]) == {f}


def test_solid_cube_has_26_surface_voxels():
    g = free_with([((2, 5), (2, 5), (2, 5))])
    ids = [g.flat(v) for v in np.argwhere(g.state == OCCUPIED)]
    got = classify_surface(g, ids)
    assert len(got) == 26
    assert g.flat((3, 3, 3)) not in got
    assert {tuple(v) for v in g.unflat(sorted(got)).tolist()} == oracles.surface_bruteforce(g.state)


# astar_path

def test_astar_identity(free_grid):
    path, length = astar_path(free_grid, [1.5, 1.5, 1.5], [1.5, 1.5, 1.5])
    assert len(path) == 1 and length == 0.0


def test_astar_straight_line():
    g = VoxelGrid.empty((0, 0, 0), 0.5, (10, 10, 1), fill=FREE)
    _, length = astar_path(g, [0.25, 0.25, 0.25], [2.75, 0.25, 0.25])
    assert length == pytest.approx(5 * 0.5)


def test_astar_wall_gap_matches_dijkstra():
    g = free_with([((5, 6), (0, 10), (0, 10))], dims=(10, 10, 10))
    g.state[5, 7, 3] = FREE
    a, b = (1, 1, 1), (8, 2, 8)
    _, length = astar_path(g, g.center(a), g.center(b))
    assert length == pytest.approx(oracles.dijkstra_grid(g.state == FREE, a, b), abs=1e-9)


def test_astar_unreachable():
    g = free_with([((5, 6), (0, 10), (0, 10))])
    with pytest.raises(Unreachable):
        astar_path(g, [1.5, 1.5, 1.5], [8.5, 1.5, 1.5])


def test_astar_clearance_keeps_away_from_walls():
    g = free_with([((0, 10), (0, 1), (0, 10))], dims=(10, 10, 10))
    df = distance_field(g)
    path, _ = astar_path(g, [1.5, 3.5, 5.5], [8.5, 3.5, 5.5], clearance=2.0, dfield=df)
    assert min(df.at(p) for p in path) >= 2.0


# raycast

def test_raycast_same_voxel_clear(free_grid):
    assert raycast(free_grid, [2.2, 2.2, 2.2], [2.8, 2.7, 2.6]).kind is Ray.CLEAR


def test_raycast_blocked_by_wall():
    g = free_with([((5, 6), (0, 10), (0, 10))])
    r = raycast(g, [1.5, 2.5, 2.5], [8.5, 2.5, 2.5])
    assert r.kind is Ray.BLOCKED and r.voxel == (5, 2, 2)


def test_raycast_reaches_target_surface_voxel():
    g = free_with([((5, 6), (0, 10), (0, 10))])
    r = raycast(g, [1.5, 2.5, 2.5], [5.2, 2.5, 2.5])
    assert r.kind is Ray.REACHED_OCCUPIED and r.voxel == (5, 2, 2)


def test_raycast_unknown_blocks():
    g = VoxelGrid.empty((0, 0, 0), 1.0, (10, 1, 1), fill=FREE)
    g.state[4] = UNKNOWN
    assert raycast(g, [0.5, 0.5, 0.5], [8.5, 0.5, 0.5]).kind is Ray.BLOCKED


# distance_field

def test_distance_all_free_is_max(free_grid):
    assert np.all(distance_field(free_grid, max_distance=7.0).values == 7.0)


def test_distance_single_obstacle_neighbor():
    g = VoxelGrid.empty((0, 0, 0), 0.5, (5, 5, 5), fill=FREE)
    g.state[2, 2, 2] = OCCUPIED
    df = distance_field(g)
    assert df.values[3, 2, 2] == pytest.approx(0.5)
    assert df.values[3, 3, 3] == pytest.approx(0.5 * np.sqrt(3))
    assert df.values[2, 2, 2] == 0.0


def test_distance_matches_bruteforce():
    rng = np.random.default_rng(7)
    state = np.where(rng.random((8, 8, 8)) < 0.08, OCCUPIED, FREE).astype(np.uint8)
    g = grid_from_states(state, resolution=0.3)
    df = distance_field(g, max_distance=5.0)
    np.testing.assert_allclose(df.values, oracles.distance_bruteforce(state, 0.3, 5.0), atol=1e-12)


# misc

def test_snapshot_is_read_only_and_picklable():
    g = _corridor()
    integrate_scan(g, [0.5, 0.5, 0.5], [[4.2, 0.5, 0.5]], [])
    snap = g.snapshot()
    with pytest.raises(ValueError):
        snap.state[0, 0, 0] = OCCUPIED
    clone = pickle.loads(pickle.dumps(snap))
    assert np.array_equal(clone.state, g.state) and clone.points == g.points


def test_load_points_csv(tmp_path):
    p = tmp_path / "pts.csv"
    p.write_text("x,y,z\n1,2,3\n\n4.5,5,6\n")
    assert load_points_csv(p).tolist() == [[1, 2, 3], [4.5, 5, 6]]
    p.write_text("1,2,3\nfoo,1,2\n")
    with pytest.raises(SceneError):
        load_points_csv(p)
