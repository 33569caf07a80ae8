import itertools
import math
from types import SimpleNamespace

import numpy as np
import pytest

from soar.photographer import (Idle, Limits, check_trajectory, generate_trajectory, on_viewpoint_reached,
                               plan_local_path, trapezoid)
from soar.world import FREE, OCCUPIED, VoxelGrid, distance_field, passable_mask


@pytest.fixture
def hall():
    return VoxelGrid.empty((0, 0, 0), 0.5, (60, 20, 20), fill=FREE)


def _vp(x, yaw=0.0, pitch=0.0, y=5.25, z=5.25):
    return SimpleNamespace(pos=np.array([x, y, z]), yaw=yaw, pitch=pitch)


# local planning

def test_one_task_one_viewpoint(hall):
    vps = {7: _vp(4.25)}
    plan = plan_local_path([1.25, 5.25, 5.25], 0.0, [3], {3: [7]}, vps, hall, passable_mask(hall), k_local=1)
    assert plan.order == [7] and plan.endpoint is None and plan.unreachable == []


def test_line_order_matches_enumeration(hall):
    xs = {10: 6.25, 11: 2.25, 20: 8.25, 21: 4.25}
    vps = {k: _vp(x) for k, x in xs.items()}
    start = 0.25
    plan = plan_local_path([start, 5.25, 5.25], 0.0, [0, 1], {0: [10, 11], 1: [20, 21]}, vps, hall,
                           passable_mask(hall), k_local=2)

    def cost(order):
        pts = [start] + [xs[o] for o in order]
        return sum(abs(b - a) for a, b in zip(pts, pts[1:]))

    best = min(itertools.permutations(xs), key=cost)
    assert plan.order == list(best) == [11, 21, 10, 20]


def test_endpoint_pulls_the_order(hall):
    vps = {1: _vp(3.25), 2: _vp(7.25), 9: _vp(20.25)}
    start = [5.75, 5.25, 5.25]
    free = passable_mask(hall)
    alone = plan_local_path(start, 0.0, [0], {0: [1, 2]}, vps, hall, free, k_local=1)
    assert alone.order == [2, 1]
    anchored = plan_local_path(start, 0.0, [0, 5], {0: [1, 2], 5: [9]}, vps, hall, free, k_local=1)
    assert anchored.order == [1, 2]
    np.testing.assert_allclose(anchored.endpoint, vps[9].pos)


def test_empty_path_is_idle(hall):
    with pytest.raises(Idle):
        plan_local_path([1, 1, 1], 0.0, [], {}, {}, hall, passable_mask(hall))


# trajectories

def test_trapezoid_ten_metres():
    a, vp, ta, tf = trapezoid(10.0, Limits())
    assert (a, vp, ta, tf) == (1.0, 1.0, 1.0, 9.0)
    assert 2 * ta + tf == 11.0


def test_short_move_is_triangular():
    a, vp, ta, tf = trapezoid(0.5, Limits())
    assert tf == 0.0 and vp < 1.0
    assert 0.5 * a * ta * ta * 2 == pytest.approx(0.5)


def test_straight_trajectory_duration_and_samples(hall):
    free = passable_mask(hall)
    start = np.array([1.25, 5.25, 5.25])
    traj = generate_trajectory(start, 0.0, 0.0, [(4, [11.25, 5.25, 5.25], 0.0, 0.0)], hall, free)
    assert traj.duration == pytest.approx(11.0)
    s0 = traj.sample(0.0)
    np.testing.assert_allclose(s0.pos, start)
    assert s0.speed == 0.0
    np.testing.assert_allclose(traj.sample(traj.duration).pos, [11.25, 5.25, 5.25])
    mid = traj.sample(5.5)
    assert mid.speed == pytest.approx(1.0) and mid.acc == 0.0
    np.testing.assert_allclose(mid.pos, [6.25, 5.25, 5.25])
    assert traj.targets() == [4]


def test_zero_length_piece_turns_in_place(hall):
    p = [3.25, 5.25, 5.25]
    traj = generate_trajectory(p, 0.0, 0.0, [(1, p, 0.0, 0.5)], hall, passable_mask(hall))
    assert traj.duration == pytest.approx(0.5)
    s = traj.sample(0.25)
    np.testing.assert_allclose(s.pos, p)
    assert s.yaw == pytest.approx(0.25)


def test_slow_yaw_stretches_motion(hall):
    lim = Limits(yaw_rate_max=0.1)
    traj = generate_trajectory([1.25, 5.25, 5.25], 0.0, 0.0, [(1, [2.25, 5.25, 5.25], 0.0, 1.0)], hall,
                               passable_mask(hall), lim)
    assert traj.duration == pytest.approx(10.0)
    chk = check_trajectory(traj, None)
    assert chk.max_speed <= 1.0 and chk.max_accel <= 1.0


def test_detour_keeps_clearance():
    g = VoxelGrid.empty((0, 0, 0), 0.5, (40, 40, 12), fill=FREE)
    g.state[18:22, 8:32, :] = OCCUPIED
    df = distance_field(g)
    free = passable_mask(g, df, 1.0)
    traj = generate_trajectory([3.25, 10.25, 3.25], 0.0, 0.0, [(0, [16.75, 10.25, 3.25], 0.0, 0.0)], g, free)
    assert traj.dropped == [] and len(traj.pieces[0].segments) > 1
    chk = check_trajectory(traj, df)
    assert chk.ok(Limits(), 1.0)


def test_unreachable_waypoint_dropped():
    g = VoxelGrid.empty((0, 0, 0), 0.5, (40, 20, 12), fill=FREE)
    g.state[20, :, :] = OCCUPIED
    free = passable_mask(g)
    wps = [(0, [15.25, 5.25, 3.25], 0.0, 0.0), (1, [3.25, 2.25, 3.25], 0.0, 0.0)]
    traj = generate_trajectory([3.25, 5.25, 3.25], 0.0, 0.0, wps, g, free)
    assert traj.dropped == [0] and traj.targets() == [1]


def test_empty_trajectory_samples_start(hall):
    traj = generate_trajectory([1.25, 1.25, 1.25], 0.3, 0.1, [], hall, passable_mask(hall))
    s = traj.sample(4.0)
    assert traj.duration == 0.0 and s.yaw == 0.3 and s.speed == 0.0


# reaching viewpoints

def test_viewpoint_reached_tolerances():
    vp = _vp(2.0, yaw=0.5, pitch=0.2)
    assert on_viewpoint_reached([2.1, 5.25, 5.25], 0.55, 0.2, vp)
    assert not on_viewpoint_reached([2.0, 5.25, 5.25], 0.5 + math.pi / 2, 0.2, vp)
    assert not on_viewpoint_reached([2.5, 5.25, 5.25], 0.5, 0.2, vp)
    assert on_viewpoint_reached([2.0, 5.25, 5.25], 0.5 - 2 * math.pi, 0.2, vp)
