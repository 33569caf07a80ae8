"""Incremental camera-viewpoint generation over the explored surface.

Stable surface clusters are extracted exactly once, their points are filtered
against the viewpoints already published, and the remainder drives
normal-guided sampling, coverage evaluation and gravitation merging.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .explore import _components, split_cluster_pca
from .sensors import CameraModel, in_frustum
from .world import FACE_DIRECTIONS, FREE, VoxelGrid, _state_or, raycast_codes
from . import _kernels as K

log = logging.getLogger(__name__)

VERTICAL_NZ = 0.999


@dataclass
class Viewpoint5D:
    id: int
    pos: np.ndarray
    pitch: float
    yaw: float
    n_obs: int = 0
    n_cover: int = 0
    dormant: bool = False
    source: int = -1  # index of the point that spawned it

    def copy(self) -> "Viewpoint5D":
        return Viewpoint5D(self.id, self.pos.copy(), self.pitch, self.yaw, self.n_obs,
                           self.n_cover, self.dormant, self.source)

    def as_dict(self) -> dict:
        return {"id": self.id, "pos": [float(v) for v in self.pos], "pitch": float(self.pitch),
                "yaw": float(self.yaw), "n_obs": self.n_obs, "n_cover": self.n_cover}


@dataclass
class SurfacePoint:
    id: int
    position: np.ndarray
    normal: np.ndarray
    covered: bool = False


@dataclass
class CoverageIndex:
    """Point id -> covering viewpoint id, plus the inverse mapping."""

    point_to_vp: dict[int, int] = field(default_factory=dict)
    vp_to_points: dict[int, set[int]] = field(default_factory=dict)

    def assign(self, point: int, vp: int) -> None:
        old = self.point_to_vp.get(point)
        if old is not None:
            self.vp_to_points[old].discard(point)
        self.point_to_vp[point] = vp
        self.vp_to_points.setdefault(vp, set()).add(point)

    def consistent(self) -> bool:
        inv = {(p, v) for v, ps in self.vp_to_points.items() for p in ps}
        return inv == set(self.point_to_vp.items())


@dataclass
class CoverageParams:
    D: float = 5.0
    r_q: float = 2.5
    coverage_threshold: float = 0.95
    max_rounds: int = 5
    k_normals: int = 10
    r_near_voxels: float = 2.0
    cluster_extent: float = 12.0
    residual_retries: int = 3
    trim: bool = False


# surface extraction ----------------------------------------------------------

def surface_clusters(grid: VoxelGrid, max_extent: float) -> list[np.ndarray]:
    """Non-extracted surface voxels grouped by 26-connectivity, then split so
    no group spans more than ``max_extent`` along its principal axis."""
    ids = np.flatnonzero(grid.surface & ~grid.extracted)
    if len(ids) == 0:
        return []
    member = set(ids.tolist())
    out = []
    for comp in _components(grid, ids.tolist(), member):
        comp = np.asarray(comp, dtype=np.int64)
        centers = grid.center(grid.unflat(comp))
        for part in split_cluster_pca(comp, centers, max_extent):
            out.append(comp[part])
    return out


def detect_explored_surface(grid: VoxelGrid, frontier_cells: Iterable[int],
                            clusters: Sequence[np.ndarray], r_near_voxels: float = 2.0) -> list[np.ndarray]:
    """Clusters with no frontier cell within ``r_near_voxels`` of any member."""
    fc = np.fromiter(frontier_cells, dtype=np.int64)
    if len(fc) == 0:
        return list(clusters)
    tree = cKDTree(grid.unflat(fc).astype(float))
    out = []
    for cl in clusters:
        d, _ = tree.query(grid.unflat(cl).astype(float), k=1, distance_upper_bound=r_near_voxels + 1e-9)
        if not np.any(np.isfinite(d)):
            out.append(cl)
    return out


@dataclass
class PointBatch:
    """Struct-of-arrays view of surface points."""

    ids: np.ndarray
    pos: np.ndarray
    voxel: np.ndarray
    normal: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ids)

    def points(self) -> list[SurfacePoint]:
        nrm = self.normal if self.normal is not None else np.zeros_like(self.pos)
        return [SurfacePoint(int(i), p, n) for i, p, n in zip(self.ids, self.pos, nrm)]

    @staticmethod
    def empty() -> "PointBatch":
        return PointBatch(np.zeros(0, dtype=np.int64), np.zeros((0, 3)), np.zeros(0, dtype=np.int64),
                          np.zeros((0, 3)))


def extract_new_points(grid: VoxelGrid, s_exp: Sequence[np.ndarray], first_id: int = 0) -> PointBatch:
    """Collect the stored points of every voxel in ``s_exp`` and flag those
    voxels extracted. Already-extracted voxels contribute nothing."""
    pos, vox = [], []
    for cl in s_exp:
        for f in np.asarray(cl).tolist():
            if grid.extracted.flat[f]:
                continue
            grid.mark_extracted(f)
            for p in grid.points.get(f, ()):
                pos.append(p)
                vox.append(f)
    n = len(pos)
    return PointBatch(np.arange(first_id, first_id + n, dtype=np.int64),
                      np.asarray(pos, dtype=float).reshape(-1, 3), np.asarray(vox, dtype=np.int64))


def _face_normals(grid: VoxelGrid, pos: np.ndarray, voxel: np.ndarray) -> np.ndarray:
    """Unit normal of the voxel face nearest each point that borders Free space."""
    out = np.zeros((len(pos), 3))
    if len(pos) == 0:
        return out
    idx = grid.unflat(voxel)
    nb_state = _state_or(grid, idx[:, None, :] + FACE_DIRECTIONS[None], -1)
    center = grid.center(idx)
    rel = (pos - center) / grid.resolution  # in [-0.5, 0.5]
    for m in range(len(pos)):
        best, score = None, -np.inf
        for d in range(6):
            if nb_state[m, d] != FREE:
                continue
            s = float(rel[m] @ FACE_DIRECTIONS[d])
            if s > score:
                best, score = d, s
        out[m] = FACE_DIRECTIONS[best] if best is not None else (0.0, 0.0, 1.0)
    return out


def estimate_normals(pos: np.ndarray, k: int = 10, grid: VoxelGrid | None = None,
                     voxel: np.ndarray | None = None) -> np.ndarray:
    """Plane-fit normals from the ``k`` nearest neighbors (smallest-variance
    axis). Sign is arbitrary. Points with fewer than three usable neighbors
    fall back to the voxel face bordering Free space (needs ``grid``)."""
    pos = np.asarray(pos, dtype=float).reshape(-1, 3)
    n = len(pos)
    normals = np.zeros((n, 3))
    fallback = np.ones(n, dtype=bool)
    if n >= 3:
        kk = min(k, n)
        _, nb = cKDTree(pos).query(pos, k=kk)
        nb = np.asarray(nb).reshape(n, kk)
        local = pos[nb] - pos[nb].mean(axis=1, keepdims=True)
        cov = np.einsum("nki,nkj->nij", local, local) / kk
        w, v = np.linalg.eigh(cov)
        normals = v[:, :, 0]
        scale = np.maximum(w[:, 2], 1e-18)
        # need a genuine plane: the middle eigenvalue must not vanish
        fallback = w[:, 1] / scale < 1e-6
    if fallback.any():
        if grid is None or voxel is None:
            normals[fallback] = (0.0, 0.0, 1.0)
        else:
            normals[fallback] = _face_normals(grid, pos[fallback], np.asarray(voxel)[fallback])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return normals


# sampling and evaluation ------------------------------------------------------

def view_angles(nv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gimbal pitch/yaw of a camera placed along ``nv`` looking back at the point."""
    nv = np.atleast_2d(nv)
    horiz = np.hypot(nv[:, 0], nv[:, 1])
    pitch = np.arctan2(nv[:, 2], horiz)
    yaw = np.arctan2(-nv[:, 1], -nv[:, 0])
    yaw = np.where(np.abs(nv[:, 2]) > VERTICAL_NZ, 0.0, yaw)
    return pitch, yaw


def sample_viewpoints(pts: PointBatch, grid: VoxelGrid, D: float, passable: np.ndarray,
                      first_id: int = 0, dedupe: bool = True) -> list[Viewpoint5D]:
    """Two candidates per point, at ``pt +/- D * normal``, kept when they sit
    in a passable voxel and see their own point.

    With ``dedupe`` only the first candidate per (voxel, view-direction bin)
    survives; candidates sharing a voxel and orientation are
    indistinguishable at map resolution.
    """
    if D <= 0:
        raise ValueError("standoff distance must be positive")
    if len(pts) == 0:
        return []
    # interleaved: point 0 (+n), point 0 (-n), point 1 (+n), ...
    nv = np.stack([pts.normal, -pts.normal], axis=1).reshape(-1, 3)
    base = np.repeat(pts.pos, 2, axis=0)
    src = np.repeat(np.arange(len(pts)), 2)
    cand = base + D * nv
    pitch, yaw = view_angles(nv)
    idx = grid.indices_of(cand)
    ok = grid.inside_mask(idx)
    ok[ok] = passable[idx[ok, 0], idx[ok, 1], idx[ok, 2]]
    keep = np.flatnonzero(ok)
    if dedupe and len(keep):
        flat = grid.flats(idx[keep])
        fwd = -nv[keep]
        bins = np.round(fwd / 0.2).astype(np.int64)
        key = np.column_stack([flat, bins])
        _, first = np.unique(key, axis=0, return_index=True)
        keep = keep[np.sort(first)]
    if len(keep):
        codes = raycast_codes(grid, cand[keep], base[keep])
        keep = keep[codes == K.REACHED]
    return [Viewpoint5D(first_id + m, cand[i].copy(), float(pitch[i]), float(yaw[i]), source=int(src[i]))
            for m, i in enumerate(keep)]


def visibility_lists(cands: Sequence[Viewpoint5D], pos: np.ndarray, grid: VoxelGrid,
                     cam: CameraModel, tree: cKDTree | None = None) -> list[np.ndarray]:
    """For each viewpoint, indices of the points it sees."""
    if len(pos) == 0:
        return [np.zeros(0, dtype=np.int64) for _ in cands]
    tree = tree if tree is not None else cKDTree(pos)
    out = []
    for cv in cands:
        near = np.asarray(tree.query_ball_point(cv.pos, cam.max_view_dist), dtype=np.int64)
        if len(near) == 0:
            out.append(near)
            continue
        near.sort()
        m = in_frustum(cv.pos, cv.pitch, cv.yaw, pos[near], cam)
        near = near[m]
        if len(near):
            codes = raycast_codes(grid, cv.pos, pos[near])
            near = near[codes == K.REACHED]
        out.append(near)
    return out


def assign_cover(cands: Sequence[Viewpoint5D], vis: Sequence[np.ndarray], n_points: int) -> np.ndarray:
    """Set n_obs/n_cover; return the covering candidate index per point (-1 if unseen).

    A point's covering viewpoint is the one with the most observations among
    those that see it, lower id on ties.
    """
    for cv, v in zip(cands, vis):
        cv.n_obs = int(len(v))
    cover = np.full(n_points, -1, dtype=np.int64)
    best_obs = np.full(n_points, -1, dtype=np.int64)
    best_id = np.full(n_points, np.iinfo(np.int64).max, dtype=np.int64)
    for c, (cv, v) in enumerate(zip(cands, vis)):
        if len(v) == 0:
            continue
        better = (cv.n_obs > best_obs[v]) | ((cv.n_obs == best_obs[v]) & (cv.id < best_id[v]))
        sel = v[better]
        cover[sel] = c
        best_obs[sel] = cv.n_obs
        best_id[sel] = cv.id
    counts = np.bincount(cover[cover >= 0], minlength=len(cands))
    for c, cv in enumerate(cands):
        cv.n_cover = int(counts[c]) if c < len(counts) else 0
    return cover


def evaluate_coverage(cands: Sequence[Viewpoint5D], pos: np.ndarray, grid: VoxelGrid,
                      cam: CameraModel, point_ids: Sequence[int] | None = None):
    """Visibility of ``pos`` from every candidate.

    Returns ``(index, cover, vis)``: a :class:`CoverageIndex` over point ids,
    the covering candidate position per point and the per-candidate visible
    point lists. ``n_obs`` / ``n_cover`` are written onto the candidates.
    """
    pos = np.asarray(pos, dtype=float).reshape(-1, 3)
    point_ids = np.arange(len(pos)) if point_ids is None else np.asarray(point_ids)
    vis = visibility_lists(cands, pos, grid, cam)
    cover = assign_cover(cands, vis, len(pos))
    index = CoverageIndex()
    for p in np.flatnonzero(cover >= 0):
        index.assign(int(point_ids[p]), cands[cover[p]].id)
    return index, cover, vis


def _blend_angle(a_i: float, others: Sequence[tuple[float, float]]) -> float:
    u = np.array([math.cos(a_i), math.sin(a_i)])
    acc = u.copy()
    for w, a in others:
        acc += w * (np.array([math.cos(a), math.sin(a)]) - u)
    if np.linalg.norm(acc) < 1e-12:
        return a_i
    return math.atan2(acc[1], acc[0])


def gravitation_update(cands: Sequence[Viewpoint5D], r_q: float, grid: VoxelGrid,
                       passable: np.ndarray) -> list[Viewpoint5D]:
    """Merge weaker neighbors into stronger viewpoints.

    Sweeps in descending ``n_cover`` (id breaks ties). Each still-active
    viewpoint pulls itself toward its unprocessed active neighbors within
    ``r_q``, weighted by ``n_cover_q / n_cover_i``, and those neighbors turn
    dormant. Angles blend on the unit circle. A pose that lands outside
    passable space reverts. Viewpoints with ``n_cover == 0`` are skipped and
    marked dormant. Returns the survivors in sweep order.
    """
    order = sorted(cands, key=lambda c: (-c.n_cover, c.id))
    if not order:
        return []
    pos = np.array([c.pos for c in order])
    tree = cKDTree(pos)
    processed = np.zeros(len(order), dtype=bool)
    survivors = []
    for i, cv in enumerate(order):
        if cv.dormant:
            continue
        processed[i] = True
        if cv.n_cover == 0:
            cv.dormant = True
            continue
        nbrs = [q for q in sorted(tree.query_ball_point(pos[i], r_q))
                if q != i and not processed[q] and not order[q].dormant]
        if nbrs:
            w = [order[q].n_cover / cv.n_cover for q in nbrs]
            new_pos = pos[i] + sum(wq * (pos[q] - pos[i]) for wq, q in zip(w, nbrs))
            new_pitch = _blend_angle(cv.pitch, [(wq, order[q].pitch) for wq, q in zip(w, nbrs)])
            new_pitch = float(np.clip(new_pitch, -math.pi / 2, math.pi / 2))
            new_yaw = _blend_angle(cv.yaw, [(wq, order[q].yaw) for wq, q in zip(w, nbrs)])
            idx = grid.index_of(new_pos)
            if grid.in_bounds(idx) and passable[idx]:
                cv.pos, cv.pitch, cv.yaw = new_pos, new_pitch, new_yaw
            for q in nbrs:
                order[q].dormant = True
        survivors.append(cv)
    return survivors


def trim_to_threshold(kept, vis, already: int, total: int, threshold: float):
    """Drop the weakest viewpoints (ascending ``n_cover``) as long as the
    points covered so far plus those seen by the rest stay at or above
    ``threshold`` of ``total``. Nothing is dropped if the full set misses it."""
    def reach(sel):
        seen = np.unique(np.concatenate([vis[c] for c in sel])) if sel else np.zeros(0)
        return (already + len(seen)) / total

    active = list(range(len(kept)))
    if reach(active) < threshold:
        return kept, vis
    for c in sorted(active, key=lambda c: (kept[c].n_cover, -c)):
        trial = [a for a in active if a != c]
        if trial and reach(trial) >= threshold:
            active = trial
    return [kept[c] for c in active], [vis[c] for c in active]


# the incremental planner -------------------------------------------------------

@dataclass
class CycleReport:
    cycle: int
    new_points: int
    new_viewpoints: int
    coverage_rate: float
    rounds: int = 0
    residual: int = 0
    warning: str | None = None

    def as_dict(self) -> dict:
        return {"cycle": self.cycle, "new_points": self.new_points, "new_viewpoints": self.new_viewpoints,
                "coverage_rate": self.coverage_rate, "rounds": self.rounds, "residual": self.residual,
                "warning": self.warning}


class CoveragePlanner:
    """Keeps every extracted point, the published viewpoints (``cv_hq``) and
    the point -> covering-viewpoint index across cycles."""

    def __init__(self, cam: CameraModel, params: CoverageParams | None = None, id_offset: int = 0):
        self.cam = cam
        self.params = params or CoverageParams()
        self.cv_hq: list[Viewpoint5D] = []
        self.index = CoverageIndex()
        self.pos = np.zeros((0, 3))
        self.normal = np.zeros((0, 3))
        self.voxel = np.zeros(0, dtype=np.int64)
        self.residual: dict[int, int] = {}  # point id -> cycles it stayed uncovered
        self.abandoned: set[int] = set()
        self.left_uncovered: set[int] = set()
        self.next_vp_id = id_offset
        self.cycle_no = 0
        self.reports: list[CycleReport] = []

    @property
    def n_points(self) -> int:
        return len(self.pos)

    # extraction
    def extract(self, grid: VoxelGrid, frontier_cells: Iterable[int]) -> PointBatch:
        clusters = surface_clusters(grid, self.params.cluster_extent)
        s_exp = detect_explored_surface(grid, frontier_cells, clusters, self.params.r_near_voxels)
        batch = extract_new_points(grid, s_exp, first_id=self.n_points)
        if len(batch):
            batch.normal = estimate_normals(batch.pos, self.params.k_normals, grid, batch.voxel)
            self.pos = np.concatenate([self.pos, batch.pos])
            self.normal = np.concatenate([self.normal, batch.normal])
            self.voxel = np.concatenate([self.voxel, batch.voxel])
        return batch

    def _batch(self, ids: np.ndarray) -> PointBatch:
        return PointBatch(ids, self.pos[ids], self.voxel[ids], self.normal[ids])

    def coverage_cycle(self, grid: VoxelGrid, new: PointBatch, passable: np.ndarray) -> list[Viewpoint5D]:
        """Cover this cycle's new points plus earlier leftovers; returns the
        viewpoints published this cycle (ids already assigned)."""
        p = self.params
        self.cycle_no += 1
        retry = np.array(sorted(self.residual), dtype=np.int64)
        work = np.unique(np.concatenate([retry, np.asarray(new.ids, dtype=np.int64)])).astype(np.int64)
        if len(work) == 0:
            self.residual = {}
            self._report(len(new), [], 0, 0, None)
            return []
        covered = np.zeros(len(work), dtype=bool)
        if self.cv_hq:
            # published viewpoints are frozen: evaluate copies, then fold the counts back
            probe = [cv.copy() for cv in self.cv_hq]
            _, cover, _ = evaluate_coverage(probe, self.pos[work], grid, self.cam, work)
            for j in np.flatnonzero(cover >= 0):
                self.index.assign(int(work[j]), probe[cover[j]].id)
            for cv, pr in zip(self.cv_hq, probe):
                cv.n_obs += pr.n_obs
                cv.n_cover = len(self.index.vp_to_points.get(cv.id, ()))
            covered = cover >= 0
        accepted: list[Viewpoint5D] = []
        rounds = 0
        warning = None
        while covered.mean() < p.coverage_threshold:
            if rounds == p.max_rounds:
                warning = "max_rounds reached below coverage threshold"
                break
            rounds += 1
            open_ids = work[~covered]
            batch = self._batch(open_ids)
            cands = sample_viewpoints(batch, grid, p.D, passable, first_id=0)
            if not cands:
                warning = "no valid viewpoint candidates"
                break
            evaluate_coverage(cands, batch.pos, grid, self.cam)
            survivors = gravitation_update(cands, p.r_q, grid, passable)
            vis = visibility_lists(survivors, batch.pos, grid, self.cam)
            cover = assign_cover(survivors, vis, len(batch))
            kept = [cv for cv in survivors if cv.n_cover > 0]
            if not kept:
                warning = "merged viewpoints cover nothing"
                break
            kept_vis = [v for cv, v in zip(survivors, vis) if cv.n_cover > 0]
            if p.trim:
                kept, kept_vis = trim_to_threshold(kept, kept_vis, int(covered.sum()), len(work),
                                                   p.coverage_threshold)
            for cv in kept:
                cv.id = self.next_vp_id
                self.next_vp_id += 1
            cover = assign_cover(kept, kept_vis, len(batch))
            for j in np.flatnonzero(cover >= 0):
                self.index.assign(int(open_ids[j]), kept[cover[j]].id)
            covered[np.isin(work, open_ids[cover >= 0])] = True
            accepted.extend(kept)
        if warning:
            log.info("coverage cycle %d: %s", self.cycle_no, warning)
        # below threshold, leftovers wait for later cycles a bounded number of
        # times; once the threshold is met they are left uncovered
        next_res = {}
        short = covered.mean() < p.coverage_threshold
        for pid in work[~covered].tolist():
            n = self.residual.get(pid, 0) + 1
            if short and n <= p.residual_retries:
                next_res[pid] = n
            elif short:
                self.abandoned.add(pid)
            else:
                self.left_uncovered.add(pid)
        self.residual = next_res
        self.cv_hq.extend(accepted)
        self._report(len(new), accepted, rounds, len(next_res), warning, float(covered.mean()))
        return accepted

    def _report(self, n_new, accepted, rounds, residual, warning, rate=1.0):
        self.reports.append(CycleReport(self.cycle_no, int(n_new), len(accepted), rate, rounds,
                                        residual, warning))

    def update(self, grid: VoxelGrid, frontier_cells: Iterable[int], passable: np.ndarray) -> list[Viewpoint5D]:
        batch = self.extract(grid, frontier_cells)
        if len(batch) == 0 and not self.residual:
            return []
        return self.coverage_cycle(grid, batch, passable)

    # reporting
    def coverage_rate(self) -> float:
        """Fraction of extracted points with a covering viewpoint."""
        if self.n_points == 0:
            return 1.0
        return len(self.index.point_to_vp) / self.n_points

    def viewpoint(self, vp_id: int) -> Viewpoint5D:
        return self._by_id()[vp_id]

    def _by_id(self) -> dict[int, Viewpoint5D]:
        return {cv.id: cv for cv in self.cv_hq}


def global_viewpoints(grid: VoxelGrid, cam: CameraModel, params: CoverageParams,
                      passable: np.ndarray) -> CoveragePlanner:
    """Single-shot run of the same sampler over every surface point of ``grid``."""
    planner = CoveragePlanner(cam, params)
    ids = np.flatnonzero(grid.surface)
    pos, vox = [], []
    for f in ids.tolist():
        for pt in grid.points.get(f, ()):
            pos.append(pt)
            vox.append(f)
    batch = PointBatch(np.arange(len(pos), dtype=np.int64), np.asarray(pos, dtype=float).reshape(-1, 3),
                       np.asarray(vox, dtype=np.int64))
    if len(batch):
        batch.normal = estimate_normals(batch.pos, params.k_normals, grid, batch.voxel)
        planner.pos, planner.normal, planner.voxel = batch.pos, batch.normal, batch.voxel
    planner.coverage_cycle(grid, batch, passable)
    return planner
