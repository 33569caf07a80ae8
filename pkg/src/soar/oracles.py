"""Brute-force reference solvers used by the test-suite and the ``oracle`` CLI.

Each one is deliberately naive and shares no code with the planners it checks.
"""
from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=16)
def _perm_table(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(1, n + 1))), dtype=np.int64).reshape(-1, n)


def atsp_exhaustive(cost) -> tuple[list[int], float]:
    """Optimal open tour from node 0 by enumerating every order (n <= 10)."""
    c = np.array(cost, dtype=float)
    n = c.shape[0] - 1
    if n <= 0:
        return [], 0.0
    if n > 10:
        raise ValueError("exhaustive ATSP limited to 10 nodes")
    perms = _perm_table(n)
    total = c[0, perms[:, 0]].copy()
    for k in range(n - 1):
        total += c[perms[:, k], perms[:, k + 1]]
    best = int(np.argmin(total))
    return perms[best].tolist(), float(total[best])


def mtsp_path_cost(path, depot: int, c_d_vct, c_vct, prev=None, R=0.0, alpha=0.0) -> float:
    """Distance cost plus consistency reward of one photographer's path."""
    if not path:
        return 0.0
    cost = c_d_vct[depot][path[0]]
    dsum = [0.0]
    for a, b in zip(path, path[1:]):
        cost += c_vct[a][b]
        dsum.append(dsum[-1] + c_vct[a][b])
    if prev:
        k = 0
        while k < min(len(path), len(prev)) and path[k] == prev[k]:
            k += 1
        cost -= sum(R * math.exp(-alpha * dsum[m]) for m in range(k))
    return cost


def mtsp_fitness(paths, c_d_vct, c_vct, eps, prev=None, R=0.0, alpha=0.0) -> float:
    prev = prev or [[] for _ in paths]
    costs = [mtsp_path_cost(p, i, c_d_vct, c_vct, prev[i], R, alpha) for i, p in enumerate(paths)]
    return -(max(costs) + eps * sum(costs))


def _splits(n: int, parts: int):
    """All ways to cut a sequence of length n into ``parts`` ordered pieces."""
    for cuts in itertools.combinations_with_replacement(range(n + 1), parts - 1):
        yield (0,) + cuts + (n,)


def mtsp_exhaustive(c_d_vct, c_vct, eps: float, prev=None, R: float = 0.0,
                    alpha: float = 0.0) -> tuple[list[list[int]], float]:
    """Best assignment over every permutation of tasks and every way of cutting
    it into one ordered path per photographer."""
    c_d_vct = np.asarray(c_d_vct, dtype=float)
    c_vct = np.asarray(c_vct, dtype=float)
    n_p, n = c_d_vct.shape
    if n > 8:
        raise ValueError("exhaustive MTSP limited to 8 tasks")
    best_fit, best_paths = -math.inf, None
    for perm in itertools.permutations(range(n)):
        for cuts in _splits(n, n_p):
            paths = [list(perm[cuts[i]:cuts[i + 1]]) for i in range(n_p)]
            fit = mtsp_fitness(paths, c_d_vct, c_vct, eps, prev, R, alpha)
            if fit > best_fit:
                best_fit, best_paths = fit, paths
    return best_paths, best_fit


def frontier_bruteforce(state: np.ndarray) -> set[tuple[int, int, int]]:
    """Every Free voxel with an Occupied and an Unknown 6-neighbor lying in
    perpendicular directions (so the two neighbors share an edge).

    Whole-grid evaluation with padded array shifts; outside the grid counts
    as neither Occupied nor Unknown.
    """
    free, occ, unk = 1, 2, 0
    pad = np.pad(state.astype(np.int16), 1, constant_values=-1)
    nx, ny, nz = state.shape
    axes = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]

    def shifted(d):
        return pad[1 + d[0]:1 + d[0] + nx, 1 + d[1]:1 + d[1] + ny, 1 + d[2]:1 + d[2] + nz]

    hit = np.zeros(state.shape, dtype=bool)
    for d1 in axes:
        o = shifted(d1) == occ
        for d2 in axes:
            if sum(x * y for x, y in zip(d1, d2)) == 0:
                hit |= o & (shifted(d2) == unk)
    hit &= state == free
    return {tuple(int(v) for v in ijk) for ijk in np.argwhere(hit)}


def surface_bruteforce(state: np.ndarray) -> set[tuple[int, int, int]]:
    nx, ny, nz = state.shape
    out = set()
    for i, j, k in zip(*np.nonzero(state == 2)):
        for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            a, b, c = i + d[0], j + d[1], k + d[2]
            if 0 <= a < nx and 0 <= b < ny and 0 <= c < nz and state[a, b, c] == 1:
                out.add((int(i), int(j), int(k)))
                break
    return out


def distance_bruteforce(state: np.ndarray, resolution: float, max_distance: float) -> np.ndarray:
    """O(n^2) nearest-Occupied-center scan."""
    occ = np.argwhere(state == 2)
    allv = np.argwhere(np.ones(state.shape, dtype=bool))
    out = np.full(len(allv), float(max_distance))
    for m, v in enumerate(allv):
        if len(occ):
            d = np.sqrt(((occ - v) ** 2).sum(axis=1)).min() * resolution
            out[m] = min(d, max_distance)
    return out.reshape(state.shape)


def dijkstra_grid(passable: np.ndarray, src, dst) -> float:
    """Plain Dijkstra on the 26-connected voxel graph without corner cutting;
    returns the length in voxel units or inf."""
    import heapq

    nx, ny, nz = passable.shape
    moves = [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1) if (a, b, c) != (0, 0, 0)]

    def ok(u, d):
        for a in range(min(d[0], 0), max(d[0], 0) + 1):
            for b in range(min(d[1], 0), max(d[1], 0) + 1):
                for c in range(min(d[2], 0), max(d[2], 0) + 1):
                    w = (u[0] + a, u[1] + b, u[2] + c)
                    if not (0 <= w[0] < nx and 0 <= w[1] < ny and 0 <= w[2] < nz) or not passable[w]:
                        return False
        return True

    src, dst = tuple(src), tuple(dst)
    dist = {src: 0.0}
    heap = [(0.0, src)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == dst:
            return d
        for m in moves:
            if not ok(u, m):
                continue
            v = (u[0] + m[0], u[1] + m[1], u[2] + m[2])
            nd = d + math.sqrt(m[0] ** 2 + m[1] ** 2 + m[2] ** 2)
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return math.inf


def _segment_voxels(p0: np.ndarray, p1: np.ndarray, shape) -> np.ndarray:
    """Voxels (grid units) crossed by segment p0->p1 with positive length,
    sorted by entry parameter. Slab test over the segment's bounding box."""
    lo = np.maximum(np.floor(np.minimum(p0, p1)).astype(int) - 1, 0)
    hi = np.minimum(np.floor(np.maximum(p0, p1)).astype(int) + 2, np.asarray(shape))
    if np.any(hi <= lo):
        return np.zeros((0, 3), dtype=int)
    box = np.stack(np.meshgrid(*[np.arange(lo[a], hi[a]) for a in range(3)], indexing="ij"), -1).reshape(-1, 3)
    d = p1 - p0
    t0 = np.zeros(len(box))
    t1 = np.ones(len(box))
    for a in range(3):
        if abs(d[a]) < 1e-15:
            inside = (p0[a] >= box[:, a]) & (p0[a] < box[:, a] + 1)
            t1 = np.where(inside, t1, -1.0)
            continue
        ta = (box[:, a] - p0[a]) / d[a]
        tb = (box[:, a] + 1 - p0[a]) / d[a]
        t0 = np.maximum(t0, np.minimum(ta, tb))
        t1 = np.minimum(t1, np.maximum(ta, tb))
    keep = t1 - t0 > 1e-9
    order = np.argsort(t0[keep], kind="stable")
    return box[keep][order]


def camera_visible_bruteforce(state: np.ndarray, origin, resolution: float, pos, pitch: float, yaw: float,
                              pt, fov_h: float, fov_v: float, max_dist: float) -> bool:
    """Range, pyramidal FoV and line of sight, all recomputed from scratch.

    The camera looks along yaw, tilted down by ``pitch``. Line of sight holds
    when every voxel the segment crosses before the point's own voxel is Free
    (the camera's own voxel excepted) and the point's voxel is Occupied.
    """
    pos = np.asarray(pos, dtype=float)
    pt = np.asarray(pt, dtype=float)
    v = pt - pos
    if np.linalg.norm(v) > max_dist + 1e-12:
        return False
    # rotate into the camera frame: undo yaw about z, then undo the downward tilt
    cy, sy = math.cos(-yaw), math.sin(-yaw)
    x1, y1, z1 = cy * v[0] - sy * v[1], sy * v[0] + cy * v[1], v[2]
    cp, sp = math.cos(pitch), math.sin(pitch)
    fwd = x1 * cp - z1 * sp
    up = x1 * sp + z1 * cp
    if fwd <= 0:
        return False
    if math.atan2(abs(y1), fwd) > math.radians(fov_h) / 2 + 1e-9:
        return False
    if math.atan2(abs(up), fwd) > math.radians(fov_v) / 2 + 1e-9:
        return False
    g0 = (pos - np.asarray(origin, dtype=float)) / resolution
    g1 = (pt - np.asarray(origin, dtype=float)) / resolution
    target = tuple(np.floor(g1).astype(int))
    start = tuple(np.floor(g0).astype(int))
    if state[target] != 2:
        return False
    for vox in _segment_voxels(g0, g1, state.shape):
        vox = tuple(int(c) for c in vox)
        if vox == target:
            return True
        if vox != start and state[vox] != 1:
            return False
    return False
