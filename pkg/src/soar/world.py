"""Shared voxel occupancy map: point store, surface flags, search, ray casting."""
from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from . import _kernels as K

UNKNOWN, FREE, OCCUPIED = int(K.UNKNOWN), int(K.FREE), int(K.OCCUPIED)
POINT_CAP = 32

FACE_DIRECTIONS = np.array(
    [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)], dtype=np.int64
)


class SceneError(ValueError):
    """Bad scene input (point outside bounds, degenerate bounds...)."""


class Unreachable(Exception):
    """No Free-voxel path connects the two query points."""


class Ray(enum.Enum):
    CLEAR = K.CLEAR
    BLOCKED = K.BLOCKED
    REACHED_OCCUPIED = K.REACHED


class RayResult(NamedTuple):
    kind: Ray
    voxel: tuple[int, int, int] | None


@dataclass
class VoxelGrid:
    origin: np.ndarray
    resolution: float
    dims: tuple[int, int, int]
    state: np.ndarray
    surface: np.ndarray
    extracted: np.ndarray
    points: dict[int, list[tuple[float, float, float]]] = field(default_factory=dict)
    seen: dict[int, int] = field(default_factory=dict)
    seed: int = 0
    extraction_events: int = 0

    def __post_init__(self) -> None:
        self.origin = np.asarray(self.origin, dtype=float)
        self._rng = np.random.default_rng(self.seed)

    @classmethod
    def empty(cls, origin, resolution: float, dims: Sequence[int], seed: int = 0,
              fill: int = UNKNOWN) -> "VoxelGrid":
        dims = tuple(int(d) for d in dims)
        return cls(
            origin=np.asarray(origin, dtype=float),
            resolution=float(resolution),
            dims=dims,
            state=np.full(dims, fill, dtype=np.uint8),
            surface=np.zeros(dims, dtype=bool),
            extracted=np.zeros(dims, dtype=bool),
            seed=seed,
        )

    def blank_copy(self, seed: int | None = None) -> "VoxelGrid":
        """All-Unknown grid with identical geometry."""
        return VoxelGrid.empty(self.origin, self.resolution, self.dims,
                               seed=self.seed if seed is None else seed)

    def snapshot(self) -> "VoxelGrid":
        """Read-only deep copy, safe to hand to planners or other processes."""
        snap = copy.deepcopy(self)
        for arr in (snap.state, snap.surface, snap.extracted):
            arr.setflags(write=False)
        return snap

    def __getstate__(self):
        d = dict(self.__dict__)
        d["_rng"] = self._rng.bit_generator.state
        return d

    def __setstate__(self, d):
        rng_state = d.pop("_rng")
        self.__dict__.update(d)
        self._rng = np.random.default_rng()
        self._rng.bit_generator.state = rng_state

    # geometry ----------------------------------------------------------
    @property
    def upper(self) -> np.ndarray:
        return self.origin + np.asarray(self.dims) * self.resolution

    def to_grid(self, p) -> np.ndarray:
        return (np.asarray(p, dtype=float) - self.origin) / self.resolution

    def index_of(self, p) -> tuple[int, int, int]:
        g = np.floor(self.to_grid(p)).astype(np.int64)
        return int(g[0]), int(g[1]), int(g[2])

    def indices_of(self, pts) -> np.ndarray:
        return np.floor(self.to_grid(pts)).astype(np.int64)

    def contains(self, p) -> bool:
        i = self.index_of(p)
        return self.in_bounds(i)

    def in_bounds(self, idx) -> bool:
        return all(0 <= int(idx[a]) < self.dims[a] for a in range(3))

    def inside_mask(self, idx: np.ndarray) -> np.ndarray:
        idx = np.atleast_2d(idx)
        return np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=1)

    def center(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.resolution

    def flat(self, idx) -> int:
        return int(np.ravel_multi_index(tuple(int(v) for v in idx), self.dims))

    def flats(self, idx: np.ndarray) -> np.ndarray:
        idx = np.atleast_2d(idx)
        return np.ravel_multi_index(idx.T, self.dims).astype(np.int64)

    def unflat(self, ids) -> np.ndarray:
        ids = np.asarray(list(ids) if not isinstance(ids, np.ndarray) else ids, dtype=np.int64)
        return np.stack(np.unravel_index(ids, self.dims), axis=-1).astype(np.int64)

    def state_at(self, p) -> int:
        idx = self.index_of(p)
        if not self.in_bounds(idx):
            return UNKNOWN
        return int(self.state[idx])

    def is_free(self, p) -> bool:
        return self.contains(p) and self.state_at(p) == FREE

    # point store -------------------------------------------------------
    def add_point(self, flat_id: int, p) -> None:
        if self.extracted.flat[flat_id]:
            # extracted voxels are frozen so every stored point is extracted once
            return
        n = self.seen.get(flat_id, 0) + 1
        self.seen[flat_id] = n
        bucket = self.points.setdefault(flat_id, [])
        pt = (float(p[0]), float(p[1]), float(p[2]))
        if len(bucket) < POINT_CAP:
            bucket.append(pt)
        else:
            j = int(self._rng.integers(0, n))
            if j < POINT_CAP:
                bucket[j] = pt

    def mark_extracted(self, flat_id: int) -> None:
        assert not self.extracted.flat[flat_id], "voxel extracted twice"
        self.extracted.flat[flat_id] = True
        self.extraction_events += 1


def _grid_dims(lo: np.ndarray, hi: np.ndarray, resolution: float) -> tuple[int, int, int]:
    span = (hi - lo) / resolution
    dims = np.ceil(span - 1e-9).astype(int)
    return tuple(int(max(d, 1)) for d in dims)


def voxelize_scene(points, resolution: float, bounds, seed: int = 0) -> VoxelGrid:
    """Ground-truth grid: Occupied where a scene point falls, Free elsewhere.

    ``bounds`` is ``(lo, hi)``. A point on the upper face belongs to the last
    voxel along that axis.
    """
    if not resolution > 0:
        raise SceneError(f"resolution must be positive, got {resolution}")
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
        raise SceneError(f"degenerate bounds {bounds}")
    grid = VoxelGrid.empty(lo, resolution, _grid_dims(lo, hi, resolution), seed=seed, fill=FREE)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return grid
    outside = np.any((pts < lo) | (pts > hi), axis=1)
    if outside.any():
        bad = int(np.argmax(outside))
        raise SceneError(f"point {bad} {pts[bad].tolist()} lies outside bounds")
    idx = grid.indices_of(pts)
    idx = np.minimum(idx, np.asarray(grid.dims) - 1)
    grid.state[idx[:, 0], idx[:, 1], idx[:, 2]] = OCCUPIED
    return grid


def _neighbors6(grid: VoxelGrid, idx: np.ndarray) -> np.ndarray:
    """(n, 6, 3) neighbor indices; caller masks out-of-bounds entries."""
    return idx[:, None, :] + FACE_DIRECTIONS[None, :, :]


def _state_or(grid: VoxelGrid, idx: np.ndarray, default: int) -> np.ndarray:
    """State lookup for an (..., 3) index array with ``default`` outside."""
    shape = idx.shape[:-1]
    flat_idx = idx.reshape(-1, 3)
    ok = grid.inside_mask(flat_idx)
    out = np.full(len(flat_idx), default, dtype=np.int16)
    good = flat_idx[ok]
    out[ok] = grid.state[good[:, 0], good[:, 1], good[:, 2]]
    return out.reshape(shape)


def surface_predicate(grid: VoxelGrid, idx: np.ndarray) -> np.ndarray:
    """Occupied with at least one Free 6-neighbor."""
    idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
    if len(idx) == 0:
        return np.zeros(0, dtype=bool)
    own = grid.state[idx[:, 0], idx[:, 1], idx[:, 2]]
    nb = _state_or(grid, _neighbors6(grid, idx), UNKNOWN)
    return (own == OCCUPIED) & np.any(nb == FREE, axis=1)


def classify_surface(grid: VoxelGrid, candidates: Iterable[int]) -> set[int]:
    """Re-evaluate the surface predicate on ``candidates`` and return the
    subset that are surface voxels. Flags on the grid are updated."""
    ids = np.fromiter(candidates, dtype=np.int64)
    if len(ids) == 0:
        return set()
    idx = grid.unflat(ids)
    pred = surface_predicate(grid, idx)
    grid.surface.flat[ids] = pred
    return set(ids[pred].tolist())


def _with_face_neighbors(grid: VoxelGrid, ids: np.ndarray) -> np.ndarray:
    if len(ids) == 0:
        return ids
    idx = grid.unflat(ids)
    nb = _neighbors6(grid, idx).reshape(-1, 3)
    nb = nb[grid.inside_mask(nb)]
    return np.unique(np.concatenate([ids, grid.flats(nb)]))


def integrate_scan(grid: VoxelGrid, sensor_origin, hits, misses) -> set[int]:
    """Fold one scan into the planning grid.

    Rays carve Free up to their end; hit voxels become Occupied and keep the
    hit point. Occupied voxels never revert. Returns the ids of every voxel
    whose state or surface flag changed.
    """
    hits = np.asarray(hits, dtype=float).reshape(-1, 3)
    misses = np.asarray(misses, dtype=float).reshape(-1, 3)
    g0 = grid.to_grid(sensor_origin)
    ends = np.concatenate([grid.to_grid(hits), grid.to_grid(misses)]) if len(hits) + len(misses) else np.zeros((0, 3))
    is_hit = np.zeros(len(ends), dtype=bool)
    is_hit[: len(hits)] = True
    state_changed = K.integrate_rays(grid.state, g0, ends, is_hit)

    if len(hits):
        hidx = grid.indices_of(hits)
        inside = grid.inside_mask(hidx)
        for p, idx in zip(hits[inside], hidx[inside]):
            f = grid.flat(idx)
            if grid.state.flat[f] == OCCUPIED:
                grid.add_point(f, p)

    changed = set(np.unique(state_changed).tolist())
    region = _with_face_neighbors(grid, np.unique(state_changed))
    if len(region):
        before = grid.surface.flat[region].copy()
        classify_surface(grid, region.tolist())
        flipped = region[before != grid.surface.flat[region]]
        changed.update(flipped.tolist())
    return changed


def raycast(grid: VoxelGrid, origin, target) -> RayResult:
    """DDA visibility from ``origin`` to ``target``.

    BLOCKED when an Occupied or Unknown voxel is met strictly before the
    target's voxel, REACHED_OCCUPIED when the target's voxel is the first
    Occupied one, CLEAR otherwise.
    """
    code, i, j, k = K.raycast_one(grid.state, grid.to_grid(origin), grid.to_grid(target))
    voxel = None if i < 0 else (int(i), int(j), int(k))
    return RayResult(Ray(int(code)), voxel)


def raycast_codes(grid: VoxelGrid, origins: np.ndarray, targets: np.ndarray) -> np.ndarray:
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    targets = np.asarray(targets, dtype=float).reshape(-1, 3)
    if len(targets) == 0:
        return np.zeros(0, dtype=np.int8)
    origins = np.broadcast_to(origins, targets.shape)
    return K.raycast_many(grid.state, np.ascontiguousarray(grid.to_grid(origins)),
                          np.ascontiguousarray(grid.to_grid(targets)))


@dataclass
class DistanceField:
    """Distance (m) from each voxel center to the nearest obstacle center."""

    values: np.ndarray
    origin: np.ndarray
    resolution: float
    max_distance: float

    def at(self, p) -> float:
        g = np.floor((np.asarray(p, dtype=float) - self.origin) / self.resolution).astype(int)
        if np.any(g < 0) or np.any(g >= self.values.shape):
            return 0.0
        return float(self.values[tuple(g)])

    def at_many(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        g = np.floor((pts - self.origin) / self.resolution).astype(int)
        ok = np.all((g >= 0) & (g < np.asarray(self.values.shape)), axis=1)
        out = np.zeros(len(pts))
        out[ok] = self.values[g[ok, 0], g[ok, 1], g[ok, 2]]
        return out


def distance_field(grid: VoxelGrid, max_distance: float = 10.0,
                   unknown_as_obstacle: bool = False) -> DistanceField:
    """Exact Euclidean distance transform over voxel centers, capped at
    ``max_distance``. Obstacle voxels get 0."""
    obstacle = grid.state == OCCUPIED
    if unknown_as_obstacle:
        obstacle = obstacle | (grid.state == UNKNOWN)
    if not obstacle.any():
        values = np.full(grid.dims, float(max_distance))
    else:
        values = ndimage.distance_transform_edt(~obstacle, sampling=grid.resolution)
        values = np.minimum(values, max_distance)
    return DistanceField(values, grid.origin.copy(), grid.resolution, float(max_distance))


def passable_mask(grid: VoxelGrid, dfield: DistanceField | None = None,
                  clearance: float = 0.0) -> np.ndarray:
    mask = grid.state == FREE
    if dfield is not None and clearance > 0:
        mask = mask & (dfield.values >= clearance - 1e-9)
    return mask


def astar_path(grid: VoxelGrid, a, b, clearance: float = 0.0,
               dfield: DistanceField | None = None,
               passable: np.ndarray | None = None) -> tuple[list[np.ndarray], float]:
    """Shortest 26-connected path between the voxels of ``a`` and ``b``.

    The returned polyline starts at ``a``, runs through interior voxel
    centers and ends at ``b``; the length is the sum of its segments. With
    ``clearance > 0`` every voxel on the path keeps that distance from
    obstacles (``dfield`` required). Raises :class:`Unreachable`.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if passable is None:
        if clearance > 0 and dfield is None:
            dfield = distance_field(grid, unknown_as_obstacle=True)
        passable = passable_mask(grid, dfield, clearance)
    ia, ib = grid.index_of(a), grid.index_of(b)
    for idx in (ia, ib):
        if not grid.in_bounds(idx) or not passable[idx]:
            raise Unreachable(f"endpoint voxel {idx} is not passable")
    if ia == ib:
        pts = [a] if np.allclose(a, b) else [a, b]
        return pts, float(np.linalg.norm(b - a))
    length, vox = K.astar(passable, np.array(ia, dtype=np.int64), np.array(ib, dtype=np.int64))
    if length < 0:
        raise Unreachable(f"no path from {ia} to {ib}")
    pts = [a] + [grid.center(v) for v in vox[1:-1]] + [b]
    total = float(sum(np.linalg.norm(pts[m + 1] - pts[m]) for m in range(len(pts) - 1)))
    return pts, total


def path_lengths(grid: VoxelGrid, src, targets, passable: np.ndarray | None = None) -> np.ndarray:
    """Graph path lengths (m) from the voxel of ``src`` to each target's voxel.

    One multi-target Dijkstra; equal to per-pair A* lengths on the same graph.
    Unreachable targets (or an impassable source) give ``inf``.
    """
    targets = np.asarray(targets, dtype=float).reshape(-1, 3)
    out = np.full(len(targets), np.inf)
    if passable is None:
        passable = passable_mask(grid)
    s = grid.index_of(src)
    if not grid.in_bounds(s) or not passable[s] or len(targets) == 0:
        return out
    tidx = grid.indices_of(targets)
    ok = grid.inside_mask(tidx)
    ok[ok] = passable[tidx[ok, 0], tidx[ok, 1], tidx[ok, 2]]
    if ok.any():
        d = K.dijkstra_targets(passable, np.array(s, dtype=np.int64), np.ascontiguousarray(tidx[ok]))
        d = np.where(d < 0, np.inf, d * grid.resolution)
        out[ok] = d
    return out


def nearest_passable(grid: VoxelGrid, p, passable: np.ndarray, max_radius: int = 6) -> np.ndarray | None:
    """Center of the closest passable voxel to ``p`` (the voxel itself first)."""
    idx = np.asarray(grid.index_of(p))
    if grid.in_bounds(idx) and passable[tuple(idx)]:
        return np.asarray(p, dtype=float)
    lo = np.maximum(idx - max_radius, 0)
    hi = np.minimum(idx + max_radius + 1, np.asarray(grid.dims))
    if np.any(hi <= lo):
        return None
    sub = passable[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    cand = np.argwhere(sub)
    if len(cand) == 0:
        return None
    cand = cand + lo
    d = np.linalg.norm(cand - idx, axis=1)
    best = cand[int(np.argmin(d))]
    return grid.center(best)


def segment_clear(grid: VoxelGrid, a, b, passable: np.ndarray) -> bool:
    """Straight segment stays inside passable voxels (DDA + dense sampling)."""
    return bool(K.segment_ok(passable, grid.to_grid(a), grid.to_grid(b), 0.1))


def load_points_csv(path) -> np.ndarray:
    """``x,y,z`` per line; a non-numeric first line is treated as a header."""
    rows = []
    with open(path) as fh:
        for n, line in enumerate(fh):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            try:
                rows.append([float(v) for v in parts[:3]])
            except ValueError:
                if n == 0:
                    continue
                raise SceneError(f"{path}:{n + 1}: cannot parse {line!r}")
            if len(parts) < 3:
                raise SceneError(f"{path}:{n + 1}: expected x,y,z")
    return np.asarray(rows, dtype=float).reshape(-1, 3)


def bounds_of(grid: VoxelGrid) -> tuple[list[float], list[float]]:
    return grid.origin.tolist(), grid.upper.tolist()


def voxel_count(grid: VoxelGrid, kind: int) -> int:
    return int(np.count_nonzero(grid.state == kind))
