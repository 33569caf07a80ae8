"""Numba kernels for voxel traversal and graph search.

All kernels work in grid coordinates: ``g = (p - origin) / resolution`` so
voxel ``(i, j, k)`` spans ``[i, i+1) x [j, j+1) x [k, k+1)``.
"""
from __future__ import annotations

import heapq
import math

import numpy as np
from numba import njit

UNKNOWN = np.uint8(0)
FREE = np.uint8(1)
OCCUPIED = np.uint8(2)

# raycast result codes
CLEAR = 0
BLOCKED = 1
REACHED = 2


@njit(cache=True)
def _setup_axis(g0, d):
    if d > 0.0:
        return 1, (math.floor(g0) + 1.0 - g0) / d, 1.0 / d
    if d < 0.0:
        return -1, (g0 - math.floor(g0)) / -d, -1.0 / d
    return 0, np.inf, np.inf


@njit(cache=True)
def _in_bounds(i, j, k, nx, ny, nz):
    return 0 <= i < nx and 0 <= j < ny and 0 <= k < nz


@njit(cache=True)
def walk(g0, g1, nx, ny, nz, out, tin):
    """Amanatides-Woo walk from g0 to g1, writing visited voxels to ``out``.

    Ties on simultaneous face crossings step x, then y, then z. Voxels outside
    the grid end the walk. ``tin`` receives the segment parameter at which
    each voxel is entered. Returns the number of voxels written.
    """
    dx = g1[0] - g0[0]
    dy = g1[1] - g0[1]
    dz = g1[2] - g0[2]
    i = int(math.floor(g0[0]))
    j = int(math.floor(g0[1]))
    k = int(math.floor(g0[2]))
    ei = int(math.floor(g1[0]))
    ej = int(math.floor(g1[1]))
    ek = int(math.floor(g1[2]))
    sx, tmx, tdx = _setup_axis(g0[0], dx)
    sy, tmy, tdy = _setup_axis(g0[1], dy)
    sz, tmz, tdz = _setup_axis(g0[2], dz)
    max_steps = abs(ei - i) + abs(ej - j) + abs(ek - k) + 1
    n = 0
    t = 0.0
    for _ in range(max_steps):
        if not _in_bounds(i, j, k, nx, ny, nz):
            break
        out[n, 0] = i
        out[n, 1] = j
        out[n, 2] = k
        tin[n] = t
        n += 1
        if i == ei and j == ej and k == ek:
            break
        if tmx <= tmy and tmx <= tmz:
            t = tmx
            i += sx
            tmx += tdx
        elif tmy <= tmz:
            t = tmy
            j += sy
            tmy += tdy
        else:
            t = tmz
            k += sz
            tmz += tdz
        if t > 1.0:
            break
    return n


@njit(cache=True)
def _walk_buffer(g0, g1):
    m = int(abs(math.floor(g1[0]) - math.floor(g0[0]))
            + abs(math.floor(g1[1]) - math.floor(g0[1]))
            + abs(math.floor(g1[2]) - math.floor(g0[2]))) + 2
    return np.empty((m, 3), dtype=np.int64), np.empty(m)


@njit(cache=True)
def raycast_one(state, g0, g1):
    """Return (code, i, j, k) for the visibility query g0 -> g1."""
    nx, ny, nz = state.shape
    buf, tin = _walk_buffer(g0, g1)
    n = walk(g0, g1, nx, ny, nz, buf, tin)
    ei = int(math.floor(g1[0]))
    ej = int(math.floor(g1[1]))
    ek = int(math.floor(g1[2]))
    for m in range(n):
        i = buf[m, 0]
        j = buf[m, 1]
        k = buf[m, 2]
        s = state[i, j, k]
        is_target = i == ei and j == ej and k == ek
        if is_target:
            if s == OCCUPIED:
                return REACHED, i, j, k
            return CLEAR, i, j, k
        if m > 0 and s != FREE:
            return BLOCKED, i, j, k
    return CLEAR, -1, -1, -1


@njit(cache=True)
def raycast_many(state, g0s, g1s):
    """Vectorised ``raycast_one``; returns codes only."""
    n = g0s.shape[0]
    codes = np.empty(n, dtype=np.int8)
    for r in range(n):
        codes[r] = raycast_one(state, g0s[r], g1s[r])[0]
    return codes


@njit(cache=True)
def lidar_cast(truth, g0, dirs, max_range_g):
    """Cast unit rays from g0 through the ground-truth grid.

    Returns hit points (grid coords) and a hit mask. A hit is the entry point
    into the first Occupied voxel, pulled a hair toward the voxel center so it
    lies strictly inside the voxel.
    """
    nx, ny, nz = truth.shape
    nr = dirs.shape[0]
    pts = np.empty((nr, 3))
    hit = np.zeros(nr, dtype=np.bool_)
    g1 = np.empty(3)
    for r in range(nr):
        for a in range(3):
            g1[a] = g0[a] + dirs[r, a] * max_range_g
        buf, tin = _walk_buffer(g0, g1)
        n = walk(g0, g1, nx, ny, nz, buf, tin)
        for m in range(n):
            i = buf[m, 0]
            j = buf[m, 1]
            k = buf[m, 2]
            if truth[i, j, k] == OCCUPIED:
                t = tin[m]
                ci = i + 0.5
                cj = j + 0.5
                ck = k + 0.5
                ex = g0[0] + (g1[0] - g0[0]) * t
                ey = g0[1] + (g1[1] - g0[1]) * t
                ez = g0[2] + (g1[2] - g0[2]) * t
                pts[r, 0] = ex + (ci - ex) * 1e-4
                pts[r, 1] = ey + (cj - ey) * 1e-4
                pts[r, 2] = ez + (ck - ez) * 1e-4
                hit[r] = True
                break
        if not hit[r]:
            for a in range(3):
                pts[r, a] = g1[a]
    return pts, hit


@njit(cache=True)
def integrate_rays(state, g0, ends, is_hit):
    """Carve Free along each ray and mark hit voxels Occupied.

    Returns flat ids of voxels whose state changed (may contain duplicates).
    """
    nx, ny, nz = state.shape
    changed = []
    for r in range(ends.shape[0]):
        buf, tin = _walk_buffer(g0, ends[r])
        n = walk(g0, ends[r], nx, ny, nz, buf, tin)
        ei = int(math.floor(ends[r, 0]))
        ej = int(math.floor(ends[r, 1]))
        ek = int(math.floor(ends[r, 2]))
        for m in range(n):
            i = buf[m, 0]
            j = buf[m, 1]
            k = buf[m, 2]
            last = i == ei and j == ej and k == ek
            if last and is_hit[r]:
                if state[i, j, k] != OCCUPIED:
                    state[i, j, k] = OCCUPIED
                    changed.append((i * ny + j) * nz + k)
            elif state[i, j, k] == UNKNOWN:
                state[i, j, k] = FREE
                changed.append((i * ny + j) * nz + k)
    out = np.empty(len(changed), dtype=np.int64)
    for m in range(len(changed)):
        out[m] = changed[m]
    return out


@njit(cache=True)
def segment_ok(passable, g0, g1, step):
    """True when every voxel touched by the segment, and every sample taken
    every ``step`` grid units along it, is passable."""
    nx, ny, nz = passable.shape
    buf, tin = _walk_buffer(g0, g1)
    n = walk(g0, g1, nx, ny, nz, buf, tin)
    if n == 0:
        return False
    last = buf[n - 1]
    if not (last[0] == int(math.floor(g1[0])) and last[1] == int(math.floor(g1[1]))
            and last[2] == int(math.floor(g1[2]))):
        return False
    for m in range(n):
        if not passable[buf[m, 0], buf[m, 1], buf[m, 2]]:
            return False
    length = math.sqrt((g1[0] - g0[0]) ** 2 + (g1[1] - g0[1]) ** 2 + (g1[2] - g0[2]) ** 2)
    ns = int(math.ceil(length / step)) + 1
    for s in range(ns + 1):
        u = s / ns
        i = int(math.floor(g0[0] + (g1[0] - g0[0]) * u))
        j = int(math.floor(g0[1] + (g1[1] - g0[1]) * u))
        k = int(math.floor(g0[2] + (g1[2] - g0[2]) * u))
        if not _in_bounds(i, j, k, nx, ny, nz) or not passable[i, j, k]:
            return False
    return True


@njit(cache=True)
def _neighbor_table():
    out = np.empty((26, 3), dtype=np.int64)
    w = np.empty(26)
    n = 0
    for di in range(-1, 2):
        for dj in range(-1, 2):
            for dk in range(-1, 2):
                if di == 0 and dj == 0 and dk == 0:
                    continue
                out[n, 0] = di
                out[n, 1] = dj
                out[n, 2] = dk
                w[n] = math.sqrt(di * di + dj * dj + dk * dk)
                n += 1
    return out, w


@njit(cache=True)
def _move_ok(passable, i, j, k, di, dj, dk):
    # no corner cutting: every voxel in the move's bounding box must pass
    nx, ny, nz = passable.shape
    for a in range(min(di, 0), max(di, 0) + 1):
        for b in range(min(dj, 0), max(dj, 0) + 1):
            for c in range(min(dk, 0), max(dk, 0) + 1):
                if not _in_bounds(i + a, j + b, k + c, nx, ny, nz):
                    return False
                if not passable[i + a, j + b, k + c]:
                    return False
    return True


@njit(cache=True)
def astar(passable, src, dst):
    """A* over voxel centers with 26-connectivity and Euclidean weights.

    Returns (length in voxel units, path voxel array). Length is -1 when the
    target is unreachable.
    """
    nx, ny, nz = passable.shape
    nbr, w = _neighbor_table()
    total = nx * ny * nz
    g = np.full(total, np.inf)
    parent = np.full(total, -1, dtype=np.int64)
    closed = np.zeros(total, dtype=np.bool_)
    s = (src[0] * ny + src[1]) * nz + src[2]
    t = (dst[0] * ny + dst[1]) * nz + dst[2]
    g[s] = 0.0
    heap = [(0.0, 0, s)]
    counter = 1
    while len(heap) > 0:
        _, _, u = heapq.heappop(heap)
        if closed[u]:
            continue
        closed[u] = True
        if u == t:
            break
        ui = u // (ny * nz)
        uj = (u // nz) % ny
        uk = u % nz
        for q in range(26):
            vi = ui + nbr[q, 0]
            vj = uj + nbr[q, 1]
            vk = uk + nbr[q, 2]
            if not _in_bounds(vi, vj, vk, nx, ny, nz):
                continue
            v = (vi * ny + vj) * nz + vk
            if closed[v]:
                continue
            if not _move_ok(passable, ui, uj, uk, nbr[q, 0], nbr[q, 1], nbr[q, 2]):
                continue
            nd = g[u] + w[q]
            if nd < g[v]:
                g[v] = nd
                parent[v] = u
                h = math.sqrt((vi - dst[0]) ** 2 + (vj - dst[1]) ** 2 + (vk - dst[2]) ** 2)
                heapq.heappush(heap, (nd + h, counter, v))
                counter += 1
    if not closed[t]:
        return -1.0, np.empty((0, 3), dtype=np.int64)
    n = 1
    v = t
    while v != s:
        v = parent[v]
        n += 1
    path = np.empty((n, 3), dtype=np.int64)
    v = t
    for m in range(n - 1, -1, -1):
        path[m, 0] = v // (ny * nz)
        path[m, 1] = (v // nz) % ny
        path[m, 2] = v % nz
        if m > 0:
            v = parent[v]
    return g[t], path


@njit(cache=True)
def dijkstra_targets(passable, src, targets):
    """Graph distances (voxel units) from ``src`` to each target voxel.

    Stops once every target is settled; unreachable targets get -1.
    """
    nx, ny, nz = passable.shape
    nbr, w = _neighbor_table()
    total = nx * ny * nz
    g = np.full(total, np.inf)
    closed = np.zeros(total, dtype=np.bool_)
    want = np.zeros(total, dtype=np.bool_)
    nt = targets.shape[0]
    remaining = 0
    for m in range(nt):
        f = (targets[m, 0] * ny + targets[m, 1]) * nz + targets[m, 2]
        if not want[f]:
            want[f] = True
            remaining += 1
    s = (src[0] * ny + src[1]) * nz + src[2]
    g[s] = 0.0
    heap = [(0.0, 0, s)]
    counter = 1
    while len(heap) > 0 and remaining > 0:
        d, _, u = heapq.heappop(heap)
        if closed[u]:
            continue
        closed[u] = True
        if want[u]:
            remaining -= 1
        ui = u // (ny * nz)
        uj = (u // nz) % ny
        uk = u % nz
        for q in range(26):
            vi = ui + nbr[q, 0]
            vj = uj + nbr[q, 1]
            vk = uk + nbr[q, 2]
            if not _in_bounds(vi, vj, vk, nx, ny, nz):
                continue
            v = (vi * ny + vj) * nz + vk
            if closed[v]:
                continue
            if not _move_ok(passable, ui, uj, uk, nbr[q, 0], nbr[q, 1], nbr[q, 2]):
                continue
            nd = d + w[q]
            if nd < g[v]:
                g[v] = nd
                heapq.heappush(heap, (nd, counter, v))
                counter += 1
    out = np.empty(nt)
    for m in range(nt):
        f = (targets[m, 0] * ny + targets[m, 1]) * nz + targets[m, 2]
        out[m] = g[f] if closed[f] else -1.0
    return out
