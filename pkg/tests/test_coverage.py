import math

import numpy as np
import pytest

from helpers import free_with
from soar import oracles
from soar.coverage import (CoverageIndex, CoverageParams, CoveragePlanner, PointBatch, Viewpoint5D,
                           detect_explored_surface, estimate_normals, evaluate_coverage, extract_new_points,
                           gravitation_update, sample_viewpoints, surface_clusters, view_angles)
from soar.sensors import CameraModel, camera_visible
from soar.world import FREE, OCCUPIED, VoxelGrid, classify_surface, passable_mask

CAM = CameraModel(80.0, 60.0, 12.5)


def _wall(dims=(40, 40, 20), res=0.5, y=(12, 20), z=(4, 12), x=20, per_voxel=2, seed=0):
    """Free grid with a one-voxel-thick wall facing -x, surface points on its face."""
    g = VoxelGrid.empty((0, 0, 0), res, dims, fill=FREE)
    g.state[x, y[0]:y[1], z[0]:z[1]] = OCCUPIED
    ids = np.flatnonzero(g.state == OCCUPIED)
    classify_surface(g, ids.tolist())
    rng = np.random.default_rng(seed)
    for f in ids.tolist():
        lo = g.center(g.unflat([f])[0]) - res / 2
        for _ in range(per_voxel):
            g.add_point(f, lo + np.array([0.01, *rng.uniform(0.05, 0.95, 2) * res]))
    return g


# explored-surface detection and extraction

def test_no_frontier_returns_every_cluster():
    g = _wall()
    cl = surface_clusters(g, 12.0)
    assert detect_explored_surface(g, [], cl) == cl


def test_cluster_near_frontier_excluded():
    g = free_with([((20, 21), (0, 8), (0, 8)), ((20, 21), (20, 28), (0, 8))], dims=(40, 40, 10))
    classify_surface(g, np.flatnonzero(g.state == OCCUPIED).tolist())
    cl = surface_clusters(g, 20.0)
    assert len(cl) == 2
    band = [g.flat((19, 8, k)) for k in range(8)]  # frontier next to the first wall's edge
    kept = detect_explored_surface(g, band, cl, r_near_voxels=2)
    assert len(kept) == 1 and g.unflat(kept[0])[:, 1].min() == 20


def test_empty_surface_gives_nothing():
    g = VoxelGrid.empty((0, 0, 0), 1.0, (5, 5, 5), fill=FREE)
    assert detect_explored_surface(g, [1, 2], surface_clusters(g, 3.0)) == []


def test_extraction_happens_once():
    g = _wall(y=(12, 13), z=(4, 7))  # 3 voxels, 2 points each
    cl = surface_clusters(g, 12.0)
    first = extract_new_points(g, cl)
    assert len(first) == 6
    assert len(extract_new_points(g, cl)) == 0
    assert g.extraction_events == 3
    # extracted voxels ignore later points
    g.add_point(int(cl[0][0]), [10.01, 6.2, 2.2])
    assert len(g.points[int(cl[0][0])]) == 2


# normals

def test_plane_normals():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(0, 5, 200), rng.uniform(0, 5, 200), np.zeros(200)])
    n = estimate_normals(pts, 10)
    np.testing.assert_allclose(np.abs(n[:, 2]), 1.0, atol=1e-6)


def test_sphere_normals_radial():
    # evenly spread (Fibonacci) points on a 3 m sphere
    i = np.arange(2000) + 0.5
    polar, azim = np.arccos(1 - 2 * i / 2000), np.pi * (1 + 5 ** 0.5) * i
    pts = 3.0 * np.column_stack([np.cos(azim) * np.sin(polar), np.sin(azim) * np.sin(polar), np.cos(polar)])
    n = estimate_normals(pts, 10)
    cosang = np.abs(np.sum(n * pts / 3.0, axis=1))
    assert np.degrees(np.arccos(np.clip(cosang, -1, 1))).max() < 5.0


def test_isolated_points_fall_back_to_face():
    g = VoxelGrid.empty((0, 0, 0), 1.0, (3, 3, 3), fill=OCCUPIED)
    g.state[1, 1, 2] = FREE
    f = g.flat((1, 1, 1))
    pts = np.array([[1.3, 1.4, 1.6], [1.7, 1.2, 1.6]])
    n = estimate_normals(pts, 10, g, np.array([f, f]))
    np.testing.assert_allclose(np.abs(n), [[0, 0, 1], [0, 0, 1]])


# sampling

def test_view_angles_horizontal_normal():
    b = PointBatch(np.array([0]), np.zeros((1, 3)), np.array([0]), np.array([[-1.0, 0, 0]]))
    pitch, yaw = view_angles(b.normal)
    assert pitch[0] == 0.0 and yaw[0] == 0.0
    p_c = b.pos[0] + 5 * b.normal[0]
    np.testing.assert_allclose(p_c, [-5, 0, 0])


def test_view_angles_vertical_normal():
    pitch, yaw = view_angles(np.array([[0.0, 0, 1]]))
    assert pitch[0] == pytest.approx(math.pi / 2) and yaw[0] == 0.0


def test_only_open_side_candidate_survives():
    g = _wall(y=(19, 20), z=(9, 10), per_voxel=1)
    f = int(np.flatnonzero(g.state == OCCUPIED)[0])
    p = np.array(g.points[f])
    # a second slab behind the wall removes the +x side
    g.state[21:40, :, :] = OCCUPIED
    batch = PointBatch(np.array([0]), p, np.array([f]), np.array([[-1.0, 0, 0]]))
    cands = sample_viewpoints(batch, g, 5.0, passable_mask(g))
    assert len(cands) == 1
    np.testing.assert_allclose(cands[0].pos, p[0] + [-5, 0, 0])
    assert cands[0].yaw == 0.0 and cands[0].pitch == 0.0


# evaluation

def _vp(i, pos, pitch=0.0, yaw=0.0):
    return Viewpoint5D(i, np.asarray(pos, dtype=float), pitch, yaw)


def test_one_viewpoint_three_points():
    g = _wall()
    f = np.flatnonzero(g.state == OCCUPIED)[:3]
    pts = np.array([g.points[i][0] for i in f.tolist()])
    cv = _vp(0, [5.0, 8.0, 4.0])
    index, cover, _ = evaluate_coverage([cv], pts, g, CAM)
    assert cv.n_obs == cv.n_cover == 3 and cover.tolist() == [0, 0, 0]
    assert index.consistent()


def test_tie_goes_to_lower_id():
    g = VoxelGrid.empty((0, 0, 0), 0.5, (40, 40, 20), fill=FREE)
    pts = np.array([[10.1, 5.2, 5.2], [10.1, 7.7, 5.2], [10.1, 10.2, 5.2]])
    for p in pts:
        g.state[g.index_of(p)] = OCCUPIED
    a = _vp(7, [5.0, 5.2, 5.2], yaw=math.radians(15))
    b = _vp(3, [5.0, 10.2, 5.2], yaw=math.radians(-15))
    a_sees = [camera_visible(g, a, p, CameraModel(30.0, 30.0, 12.5)) for p in pts]
    b_sees = [camera_visible(g, b, p, CameraModel(30.0, 30.0, 12.5)) for p in pts]
    assert a_sees == [True, True, False] and b_sees == [False, True, True]
    _, cover, _ = evaluate_coverage([a, b], pts, g, CameraModel(30.0, 30.0, 12.5))
    assert a.n_obs == b.n_obs == 2
    assert cover.tolist() == [0, 1, 1]  # the shared point goes to id 3
    assert (a.n_cover, b.n_cover) == (1, 2)


def test_cover_counts_match_visibility_matrix():
    rng = np.random.default_rng(3)
    g = _wall(per_voxel=3)
    g.state[rng.integers(0, 19, 30), rng.integers(0, 40, 30), rng.integers(0, 20, 30)] = OCCUPIED
    pts = np.array([p for f in np.flatnonzero(g.surface).tolist() for p in g.points.get(f, [])])
    cands = [_vp(i, [rng.uniform(3, 8), rng.uniform(3, 17), rng.uniform(1, 9)], rng.uniform(-0.4, 0.4),
                 rng.uniform(-0.6, 0.6)) for i in range(12)]
    cands = [c for c in cands if g.is_free(c.pos)]
    _, cover, _ = evaluate_coverage(cands, pts, g, CAM)
    vis = np.array([[oracles.camera_visible_bruteforce(g.state, g.origin, g.resolution, c.pos, c.pitch, c.yaw,
                                                       p, 80.0, 60.0, 12.5) for p in pts] for c in cands])
    assert sum(c.n_cover for c in cands) == int(vis.any(axis=0).sum()) > 0
    np.testing.assert_array_equal([c.n_obs for c in cands], vis.sum(axis=1))
    assert all(c.n_cover <= c.n_obs for c in cands)


# gravitation

def test_gravitation_pulls_toward_weaker_neighbor():
    g = VoxelGrid.empty((-5, -5, -5), 0.5, (20, 20, 20), fill=FREE)
    a, b = _vp(0, [0.1, 0.1, 0.1]), _vp(1, [2.1, 0.1, 0.1])
    a.n_cover, b.n_cover = 10, 5
    out = gravitation_update([a, b], 2.5, g, passable_mask(g))
    assert out == [a] and b.dormant
    np.testing.assert_allclose(a.pos, [1.1, 0.1, 0.1])


def test_no_neighbor_no_change():
    g = VoxelGrid.empty((-5, -5, -5), 0.5, (40, 20, 20), fill=FREE)
    a, b = _vp(0, [0.1, 0.1, 0.1]), _vp(1, [6.1, 0.1, 0.1])
    a.n_cover, b.n_cover = 4, 4
    out = gravitation_update([a, b], 2.5, g, passable_mask(g))
    assert out == [a, b]
    np.testing.assert_allclose(a.pos, [0.1, 0.1, 0.1])


def test_three_mutual_neighbors_one_survivor():
    g = VoxelGrid.empty((-5, -5, -5), 0.5, (20, 20, 20), fill=FREE)
    vs = [_vp(i, [0.1 + 0.5 * i, 0.1, 0.1]) for i in range(3)]
    for v, n in zip(vs, (3, 9, 5)):
        v.n_cover = n
    out = gravitation_update(vs, 2.5, g, passable_mask(g))
    assert [v.id for v in out] == [1]
    assert sum(v.dormant for v in vs) == 2  # survivors plus dormant make up the input


def test_merge_reverts_into_obstacle():
    g = VoxelGrid.empty((-5, -5, -5), 0.5, (20, 20, 20), fill=FREE)
    g.state[g.index_of([1.1, 0.1, 0.1])] = OCCUPIED
    a, b = _vp(0, [0.1, 0.1, 0.1]), _vp(1, [2.1, 0.1, 0.1])
    a.n_cover, b.n_cover = 10, 5
    gravitation_update([a, b], 2.5, g, passable_mask(g))
    np.testing.assert_allclose(a.pos, [0.1, 0.1, 0.1])


def test_yaw_blends_across_seam():
    g = VoxelGrid.empty((-5, -5, -5), 0.5, (20, 20, 20), fill=FREE)
    a, b = _vp(0, [0.1, 0.1, 0.1], yaw=math.pi - 0.1), _vp(1, [1.1, 0.1, 0.1], yaw=-math.pi + 0.1)
    a.n_cover, b.n_cover = 10, 5
    gravitation_update([a, b], 2.5, g, passable_mask(g))
    # halfway between the two headings is the seam itself, not zero
    assert abs(abs(a.yaw) - math.pi) < 1e-9


# the cycle

def _planner_with_wall(**kw):
    g = _wall(**kw)
    planner = CoveragePlanner(CAM, CoverageParams())
    batch = planner.extract(g, [])
    return g, planner, batch


def test_zero_new_points_leaves_viewpoints():
    g, planner, batch = _planner_with_wall()
    free = passable_mask(g)
    planner.coverage_cycle(g, batch, free)
    before = [(v.id, v.pos.tolist()) for v in planner.cv_hq]
    assert planner.coverage_cycle(g, PointBatch.empty(), free) == []
    assert [(v.id, v.pos.tolist()) for v in planner.cv_hq] == before


def test_small_wall_patch_needs_one_viewpoint():
    # 4 m x 4 m at 0.5 m voxels
    g, planner, batch = _planner_with_wall(y=(12, 20), z=(4, 12))
    assert len(batch) == 128
    new = planner.coverage_cycle(g, batch, passable_mask(g))
    assert len(new) == 1
    assert planner.coverage_rate() >= 0.95


def test_covered_points_visible_from_their_viewpoint():
    g, planner, batch = _planner_with_wall(y=(4, 36), z=(2, 16), per_voxel=1)
    planner.coverage_cycle(g, batch, passable_mask(g))
    by_id = {v.id: v for v in planner.cv_hq}
    assert planner.index.consistent()
    for pid, vid in planner.index.point_to_vp.items():
        v = by_id[vid]
        assert oracles.camera_visible_bruteforce(g.state, g.origin, g.resolution, v.pos, v.pitch, v.yaw,
                                                 planner.pos[pid], 80.0, 60.0, 12.5)
    assert all(v.n_cover <= v.n_obs for v in planner.cv_hq)


def test_index_inverse():
    idx = CoverageIndex()
    idx.assign(1, 10)
    idx.assign(2, 10)
    idx.assign(1, 11)
    assert idx.point_to_vp == {1: 11, 2: 10}
    assert idx.vp_to_points == {10: {2}, 11: {1}}
    assert idx.consistent()
