"""Explorer logic: surface frontiers, their clusters and exploration tours."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .routes import build_atsp_matrix, solve_atsp
from .world import FACE_DIRECTIONS, FREE, OCCUPIED, UNKNOWN, VoxelGrid, _state_or, raycast_codes

# index pairs into FACE_DIRECTIONS that are perpendicular (their voxels share an edge)
_PERP_PAIRS = np.array(
    [(a, b) for a in range(6) for b in range(6) if int(FACE_DIRECTIONS[a] @ FACE_DIRECTIONS[b]) == 0]
)
_OUTSIDE = 255

_NBR26 = np.array(
    [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1) if (a, b, c) != (0, 0, 0)],
    dtype=np.int64,
)


class NoTarget(Exception):
    """Every frontier cluster is dormant."""


@dataclass
class FrontierCluster:
    id: int
    cells: tuple[int, ...]
    centers: np.ndarray
    centroid: np.ndarray
    viewpoint: np.ndarray | None = None
    yaw: float = 0.0
    visible: int = 0
    dormant: bool = False

    @property
    def pose(self):
        return self.viewpoint, self.yaw


def frontier_predicate(grid: VoxelGrid, idx: np.ndarray) -> np.ndarray:
    """Free voxel with an Occupied and an Unknown 6-neighbor whose directions
    are perpendicular, i.e. the two neighbors are themselves adjacent."""
    idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
    if len(idx) == 0:
        return np.zeros(0, dtype=bool)
    own = grid.state[idx[:, 0], idx[:, 1], idx[:, 2]]
    nb = _state_or(grid, idx[:, None, :] + FACE_DIRECTIONS[None], _OUTSIDE)
    occ = nb == OCCUPIED
    unk = nb == UNKNOWN
    pair = occ[:, _PERP_PAIRS[:, 0]] & unk[:, _PERP_PAIRS[:, 1]]
    return (own == FREE) & pair.any(axis=1)


def frontier_cells_full(grid: VoxelGrid) -> set[int]:
    idx = np.argwhere(grid.state == FREE)
    return set(grid.flats(idx)[frontier_predicate(grid, idx)].tolist()) if len(idx) else set()


def split_cluster_pca(cells: np.ndarray, centers: np.ndarray, max_extent: float) -> list[np.ndarray]:
    """Recursively halve a cell set across its centroid, orthogonal to the
    first principal axis, until each part spans at most ``max_extent`` along
    its own first axis. Returns index arrays into ``cells``."""
    out: list[np.ndarray] = []
    stack = [np.arange(len(cells))]
    while stack:
        sel = stack.pop()
        pts = centers[sel]
        if len(sel) <= 3:
            out.append(sel)
            continue
        mean = pts.mean(axis=0)
        cov = np.cov((pts - mean).T)
        w, v = np.linalg.eigh(cov)
        axis = v[:, -1]
        proj = (pts - mean) @ axis
        if proj.max() - proj.min() <= max_extent + 1e-9:
            out.append(sel)
            continue
        left = proj < 0
        if left.all() or not left.any():
            out.append(sel)
            continue
        stack.append(sel[~left])
        stack.append(sel[left])
    return [np.sort(s) for s in out]


def _components(grid: VoxelGrid, ids: Iterable[int], member: set[int]) -> list[list[int]]:
    """26-connected components of ``ids`` restricted to ``member``."""
    seen: set[int] = set()
    comps = []
    dims = np.asarray(grid.dims)
    for s in sorted(ids):
        if s in seen or s not in member:
            continue
        comp = []
        q = deque([s])
        seen.add(s)
        while q:
            u = q.popleft()
            comp.append(u)
            ui = np.asarray(np.unravel_index(u, grid.dims))
            nb = ui + _NBR26
            nb = nb[np.all((nb >= 0) & (nb < dims), axis=1)]
            for v in np.ravel_multi_index(nb.T, grid.dims).tolist():
                if v in member and v not in seen:
                    seen.add(v)
                    q.append(v)
        comps.append(sorted(comp))
    return comps


@dataclass
class ViewpointSampling:
    radii: tuple[float, ...] = (3.0, 5.0)
    heights: tuple[float, ...] = (-2.0, 0.0, 2.0)
    yaw_count: int = 12
    max_range: float = 30.0


def sample_exploration_viewpoint(cluster: FrontierCluster, grid: VoxelGrid, passable: np.ndarray,
                                 sampling: ViewpointSampling = ViewpointSampling()):
    """Best candidate around the cluster centroid.

    Candidates run radius-major, then azimuth, then height; each faces the
    centroid and must sit in a passable (Free + clearance) voxel. Returns
    ``(position, yaw, visible_count)`` or ``None`` when no candidate sees a
    cell.
    """
    c = cluster.centroid
    best = None
    for r in sampling.radii:
        for m in range(sampling.yaw_count):
            phi = 2 * math.pi * m / sampling.yaw_count
            for h in sampling.heights:
                p = c + np.array([r * math.cos(phi), r * math.sin(phi), h])
                idx = grid.index_of(p)
                if not grid.in_bounds(idx) or not passable[idx]:
                    continue
                d = np.linalg.norm(cluster.centers - p, axis=1)
                near = d <= sampling.max_range
                count = 0
                if near.any():
                    codes = raycast_codes(grid, p, cluster.centers[near])
                    count = int(np.count_nonzero(codes == 0))
                if count >= 1 and (best is None or count > best[2]):
                    yaw = math.atan2(c[1] - p[1], c[0] - p[0])
                    best = (p, yaw, count)
    return best


@dataclass
class FrontierTracker:
    """Incrementally maintained surface-frontier cells and their clusters."""

    grid: VoxelGrid
    max_extent: float = 4.0
    cells: set[int] = field(default_factory=set)
    clusters: dict[int, FrontierCluster] = field(default_factory=dict)
    owner: dict[int, int] = field(default_factory=dict)
    next_id: int = 0

    def update(self, grid: VoxelGrid, changed: Iterable[int]) -> dict[int, FrontierCluster]:
        """Re-evaluate the frontier predicate around ``changed`` voxels, drop
        every cluster the update touches and re-cluster what remains there.
        Untouched clusters keep their ids. Returns the ids of new clusters."""
        self.grid = grid
        changed = np.fromiter(changed, dtype=np.int64)
        if len(changed) == 0:
            return {}
        idx = grid.unflat(np.unique(changed))
        nb = (idx[:, None, :] + FACE_DIRECTIONS[None]).reshape(-1, 3)
        region_idx = np.unique(np.concatenate([idx, nb[grid.inside_mask(nb)]]), axis=0)
        region = grid.flats(region_idx)
        status = frontier_predicate(grid, region_idx)
        touched: set[int] = set()
        seeds: set[int] = set()
        for f, st in zip(region.tolist(), status.tolist()):
            if f in self.owner:
                touched.add(self.owner[f])
            if st:
                self.cells.add(f)
                seeds.add(f)
            else:
                self.cells.discard(f)
        return self._recluster(grid, touched, seeds)

    def _recluster(self, grid, touched: set[int], seeds: set[int]) -> dict[int, FrontierCluster]:
        pending = set(seeds)
        for cid in touched:
            pending.update(self.clusters[cid].cells)
        for cid in list(touched):
            self._drop(cid)
        comps = _components(grid, [p for p in pending if p in self.cells], self.cells)
        # a component may reach into an untouched cluster; absorb it
        for comp in comps:
            for cid in {self.owner[f] for f in comp if f in self.owner}:
                self._drop(cid)
        new = {}
        for comp in comps:
            ids = np.asarray(comp, dtype=np.int64)
            centers = grid.center(grid.unflat(ids))
            for part in split_cluster_pca(ids, centers, self.max_extent):
                for sub in _components(grid, ids[part].tolist(), set(ids[part].tolist())):
                    cl = self._make(grid, sub)
                    new[cl.id] = cl
        return new

    def _drop(self, cid: int) -> None:
        cl = self.clusters.pop(cid, None)
        if cl is None:
            return
        for f in cl.cells:
            if self.owner.get(f) == cid:
                del self.owner[f]

    def _make(self, grid, cells: list[int]) -> FrontierCluster:
        ids = np.asarray(cells, dtype=np.int64)
        centers = grid.center(grid.unflat(ids))
        cl = FrontierCluster(self.next_id, tuple(cells), centers, centers.mean(axis=0))
        self.next_id += 1
        self.clusters[cl.id] = cl
        for f in cells:
            self.owner[f] = cl.id
        return cl


def detect_surface_frontiers(tracker: FrontierTracker, grid: VoxelGrid, changed) -> dict[int, FrontierCluster]:
    """Update ``tracker`` with a map change and return the full cluster set."""
    tracker.update(grid, changed)
    return tracker.clusters


def refresh_viewpoints(clusters: Iterable[FrontierCluster], grid: VoxelGrid, passable: np.ndarray,
                       sampling: ViewpointSampling, only_missing: bool = True) -> None:
    """(Re)sample viewpoints; clusters without a valid one turn dormant."""
    for cl in clusters:
        if only_missing and cl.viewpoint is not None and not cl.dormant:
            continue
        res = sample_exploration_viewpoint(cl, grid, passable, sampling)
        if res is None:
            cl.dormant = True
            cl.viewpoint = None
            cl.visible = 0
        else:
            cl.viewpoint, cl.yaw, cl.visible = res
            cl.dormant = False


def plan_exploration_step(grid: VoxelGrid, position, yaw: float, clusters: Iterable[FrontierCluster],
                          v_max: float = 2.0, yaw_rate_max: float = 2.0, seed: int = 0,
                          passable: np.ndarray | None = None) -> list[FrontierCluster]:
    """Tour over active cluster viewpoints, explorer pose as the start node.
    The first entry is the next motion target."""
    active = sorted((c for c in clusters if not c.dormant and c.viewpoint is not None), key=lambda c: c.id)
    if not active:
        raise NoTarget("no active frontier cluster")
    if len(active) == 1:
        return active
    m = build_atsp_matrix(grid, (position, yaw), [c.pose for c in active], v_max, yaw_rate_max, passable)
    order = solve_atsp(m, seed=seed)
    return [active[i - 1] for i in order]


def exploration_done(clusters) -> bool:
    """No frontier cluster left, dormant or not."""
    return len(clusters) == 0
