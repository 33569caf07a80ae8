import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from soar import oracles
from soar.assign import Individual, _encode, _mutate
from soar.coverage import Viewpoint5D, gravitation_update
from soar.routes import AtspMatrix, solve_atsp
from soar.sensors import CameraModel, in_frustum
from soar.world import FREE, OCCUPIED, Unreachable, VoxelGrid, astar_path

seeds = st.integers(0, 2 ** 31 - 1)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(3, 12), st.floats(0.0, 0.35))
def test_astar_length_equals_dijkstra(seed, n, density):
    rng = np.random.default_rng(seed)
    state = np.where(rng.random((n, n, n)) < density, OCCUPIED, FREE).astype(np.uint8)
    a, b = tuple(rng.integers(0, n, 3)), tuple(rng.integers(0, n, 3))
    state[a] = state[b] = FREE
    g = VoxelGrid.empty((0, 0, 0), 1.0, state.shape, fill=FREE)
    g.state[...] = state
    ref = oracles.dijkstra_grid(state == FREE, a, b)
    try:
        _, length = astar_path(g, g.center(a), g.center(b))
    except Unreachable:
        length = math.inf
    assert length == ref or math.isclose(length, ref, rel_tol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(2, 15))
def test_atsp_returns_a_permutation(seed, n):
    rng = np.random.default_rng(seed)
    m = AtspMatrix(rng.uniform(0, 20, (n, n)))
    assert sorted(solve_atsp(m, seed=seed)) == list(range(1, n))


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 4), st.integers(1, 12), st.integers(1, 30))
def test_mutation_keeps_a_partition(seed, n_p, n, rounds):
    rng = np.random.default_rng(seed)
    cut = np.sort(rng.integers(0, n + 1, n_p - 1))
    perm = rng.permutation(n).tolist()
    paths = [perm[a:b] for a, b in zip([0, *cut], [*cut, n])]
    P, L = _encode([Individual(paths)], {t: t for t in range(n)}, n_p, n)
    for _ in range(rounds):
        _mutate(P[0], L[0])
        flat = [int(P[0, i, k]) for i in range(n_p) for k in range(L[0, i])]
        assert sorted(flat) == list(range(n))


@settings(max_examples=60, deadline=None)
@given(st.floats(10.0, 150.0), st.floats(10.0, 150.0), st.floats(-1.5, 1.5), st.floats(-3.1, 3.1), seeds)
def test_wider_fov_sees_superset(h, v, pitch, yaw, seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-10, 10, (200, 3))
    narrow = in_frustum([0, 0, 0], pitch, yaw, pts, CameraModel(h, v, 12.0))
    wide = in_frustum([0, 0, 0], pitch, yaw, pts, CameraModel(min(h + 15, 170), min(v + 15, 170), 12.0))
    assert np.all(wide[narrow])


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 25))
def test_gravitation_keeps_every_viewpoint_accounted(seed, n):
    rng = np.random.default_rng(seed)
    g = VoxelGrid.empty((0, 0, 0), 0.5, (20, 20, 20), fill=FREE)
    passable = g.state == FREE
    cands = [Viewpoint5D(i, rng.uniform(1, 9, 3), float(rng.uniform(-1, 1)), float(rng.uniform(-3, 3)),
                         n_cover=int(rng.integers(0, 20))) for i in range(n)]
    out = gravitation_update(cands, 2.5, g, passable)
    ids = {c.id for c in out}
    assert all(not c.dormant and c.n_cover > 0 for c in out)
    assert ids | {c.id for c in cands if c.dormant} == set(range(n))
    assert not ids & {c.id for c in cands if c.dormant}
    for c in out:
        assert passable[g.index_of(c.pos)] and -math.pi / 2 <= c.pitch <= math.pi / 2
    # the strongest viewpoint is swept first, so it can never be absorbed
    strongest = max(cands, key=lambda c: (c.n_cover, -c.id))
    if strongest.n_cover > 0:
        assert strongest.id in ids
