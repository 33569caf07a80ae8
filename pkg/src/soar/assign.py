"""Viewpoint-cluster tasks and the consistency-aware multi-depot GA assigner."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .world import VoxelGrid, path_lengths, raycast_codes
from . import _kernels as K

log = logging.getLogger(__name__)


# viewpoint-cluster tasks ------------------------------------------------------

@dataclass
class VCT:
    id: int
    vps: dict[int, np.ndarray]
    p_avg: np.ndarray
    h_cost: float
    anchor: np.ndarray | None = None  # p_avg at the time l_cost entries were cached

    @property
    def size(self) -> int:
        return len(self.vps)


@dataclass
class VCTSet:
    """Open tasks plus the lazily filled inter-task distance cache."""

    d_thr: float = 6.0
    lam_h: float = 0.6
    vcts: dict[int, VCT] = field(default_factory=dict)
    l_cost: dict[tuple[int, int], float] = field(default_factory=dict)
    member_of: dict[int, int] = field(default_factory=dict)
    next_id: int = 0
    version: int = 0  # bumped on every membership change

    def h_cost(self, n: int) -> float:
        return self.lam_h * (n - 1) * self.d_thr

    def ids(self) -> list[int]:
        return sorted(self.vcts)

    def __len__(self) -> int:
        return len(self.vcts)

    def _refresh(self, v: VCT) -> None:
        v.p_avg = np.mean(np.array(list(v.vps.values())), axis=0)
        v.h_cost = self.h_cost(len(v.vps))
        if v.anchor is not None and np.linalg.norm(v.p_avg - v.anchor) > self.d_thr / 2:
            self._forget(v.id)
            v.anchor = None
        self.version += 1

    def _forget(self, vid: int) -> None:
        for key in [k for k in self.l_cost if vid in k]:
            del self.l_cost[key]


def _mutually_visible(grid: VoxelGrid, a: np.ndarray, b: np.ndarray) -> bool:
    codes = raycast_codes(grid, np.array([a, b]), np.array([b, a]))
    return bool(np.all(codes == K.CLEAR))


def add_viewpoint(vcts: VCTSet, vp_id: int, pos, grid: VoxelGrid, d_thr: float | None = None) -> int:
    """Join the nearest compatible task or open a new singleton; returns the task id."""
    if vp_id in vcts.member_of:
        raise ValueError(f"viewpoint {vp_id} already belongs to task {vcts.member_of[vp_id]}")
    d_thr = vcts.d_thr if d_thr is None else d_thr
    pos = np.asarray(pos, dtype=float)
    near = []
    for v in vcts.vcts.values():
        d = float(np.linalg.norm(v.p_avg - pos))
        if d <= d_thr:
            near.append((d, v.id))
    for _, vid in sorted(near):
        v = vcts.vcts[vid]
        if all(np.linalg.norm(q - pos) <= d_thr and _mutually_visible(grid, q, pos) for q in v.vps.values()):
            v.vps[vp_id] = pos.copy()
            vcts.member_of[vp_id] = vid
            vcts._refresh(v)
            return vid
    v = VCT(vcts.next_id, {vp_id: pos.copy()}, pos.copy(), 0.0)
    vcts.next_id += 1
    vcts.vcts[v.id] = v
    vcts.member_of[vp_id] = v.id
    vcts._refresh(v)
    return v.id


def mark_visited(vcts: VCTSet, vct_id: int, vp_id: int) -> bool:
    """Remove a visited viewpoint; returns True when the task emptied and was deleted."""
    v = vcts.vcts.get(vct_id)
    if v is None or vp_id not in v.vps:
        raise KeyError(f"viewpoint {vp_id} is not a member of task {vct_id}")
    del v.vps[vp_id]
    del vcts.member_of[vp_id]
    if not v.vps:
        del vcts.vcts[vct_id]
        vcts._forget(vct_id)
        vcts.version += 1
        return True
    vcts._refresh(v)
    return False


# cost model ---------------------------------------------------------------------

@dataclass
class AssignmentCostModel:
    c_d_vct: np.ndarray  # (N_p, N_vct)
    c_vct: np.ndarray  # (N_vct, N_vct)
    R: float = 50.0
    alpha: float = 0.1
    eps: float = 1e-4
    ids: list[int] | None = None  # column index -> task id

    def index(self) -> dict[int, int]:
        ids = self.ids if self.ids is not None else list(range(self.c_vct.shape[0]))
        return {t: m for m, t in enumerate(ids)}


@dataclass
class Individual:
    paths: list[list[int]]
    fitness: float = -math.inf

    def copy(self) -> "Individual":
        return Individual([list(p) for p in self.paths], self.fitness)

    def flat(self) -> list[int]:
        return [t for p in self.paths for t in p]


def path_cost(path, photographer: int, model: AssignmentCostModel) -> float:
    """Depot leg plus inter-task legs along one photographer's path."""
    if not path:
        return 0.0
    ix = model.index()
    p = [ix[t] for t in path]
    cost = model.c_d_vct[photographer, p[0]]
    for a, b in zip(p, p[1:]):
        cost += model.c_vct[a, b]
    return float(cost)


def common_prefix(a, b) -> int:
    k = 0
    while k < min(len(a), len(b)) and a[k] == b[k]:
        k += 1
    return k


def consistency_cost(path, prev_path, model: AssignmentCostModel) -> float:
    """Reward (negative cost) for repeating the previous path's prefix.

    ``prev_path`` must already be filtered to open tasks."""
    k_same = common_prefix(path, prev_path)
    if k_same == 0:
        return 0.0
    ix = model.index()
    total, dsum = 0.0, 0.0
    for k in range(k_same):
        if k > 0:
            dsum += model.c_vct[ix[path[k - 1]], ix[path[k]]]
        total -= model.R * math.exp(-model.alpha * dsum)
    return total


def fitness(ind: Individual, prev_best: Individual | None, model: AssignmentCostModel) -> float:
    costs = []
    for i, p in enumerate(ind.paths):
        c = path_cost(p, i, model)
        if prev_best is not None:
            c += consistency_cost(p, prev_best.paths[i], model)
        costs.append(c)
    return -(max(costs) + model.eps * sum(costs))


# GA kernels (index space: tasks are 0..n-1) --------------------------------------

@njit(cache=True)
def _fit(P, L, cd, cv, prev, prev_len, R, alpha, eps):
    worst = -np.inf
    total = 0.0
    for i in range(P.shape[0]):
        cost = 0.0
        n = L[i]
        if n > 0:
            cost = cd[i, P[i, 0]]
            dsum = 0.0
            same = R != 0.0
            for m in range(n):
                if m > 0:
                    leg = cv[P[i, m - 1], P[i, m]]
                    cost += leg
                    dsum += leg
                if same:
                    if m < prev_len[i] and prev[i, m] == P[i, m]:
                        cost -= R * np.exp(-alpha * dsum)
                    else:
                        same = False
        if cost > worst:
            worst = cost
        total += cost
    return -(worst + eps * total)


@njit(cache=True)
def _pick_path(L, min_len, exclude):
    cnt = 0
    for i in range(L.shape[0]):
        if L[i] >= min_len and i != exclude:
            cnt += 1
    if cnt == 0:
        return -1
    r = np.random.randint(cnt)
    for i in range(L.shape[0]):
        if L[i] >= min_len and i != exclude:
            if r == 0:
                return i
            r -= 1
    return -1


@njit(cache=True)
def _mutate(P, L):
    """Apply one random operator in place; returns the operator code or -1."""
    n_p = P.shape[0]
    for _ in range(8):
        op = np.random.randint(4)
        if op == 0:  # reverse a segment inside one path
            i = _pick_path(L, 2, -1)
            if i < 0:
                continue
            a = np.random.randint(L[i])
            b = np.random.randint(L[i])
            if a == b:
                continue
            if a > b:
                a, b = b, a
            while a < b:
                P[i, a], P[i, b] = P[i, b], P[i, a]
                a += 1
                b -= 1
            return op
        if op == 1:  # move a block of 1-3 tasks within one path
            i = _pick_path(L, 2, -1)
            if i < 0:
                continue
            n = L[i]
            seg = 1 + np.random.randint(min(3, n - 1))
            s = np.random.randint(n - seg + 1)
            block = P[i, s:s + seg].copy()
            if np.random.random() < 0.5:
                block = block[::-1].copy()
            rest = np.empty(n - seg, dtype=P.dtype)
            rest[:s] = P[i, :s]
            rest[s:] = P[i, s + seg:n]
            q = np.random.randint(n - seg + 1)
            if q == s:
                continue
            P[i, :q] = rest[:q]
            P[i, q:q + seg] = block
            P[i, q + seg:n] = rest[q:]
            return op
        if op == 2:  # move one task to another path
            if n_p < 2:
                continue
            i = _pick_path(L, 1, -1)
            if i < 0:
                continue
            j = np.random.randint(n_p - 1)
            if j >= i:
                j += 1
            a = np.random.randint(L[i])
            t = P[i, a]
            for m in range(a, L[i] - 1):
                P[i, m] = P[i, m + 1]
            L[i] -= 1
            q = np.random.randint(L[j] + 1)
            for m in range(L[j], q, -1):
                P[j, m] = P[j, m - 1]
            P[j, q] = t
            L[j] += 1
            return op
        # swap tasks between two paths
        i = _pick_path(L, 1, -1)
        if i < 0:
            continue
        j = _pick_path(L, 1, i)
        if j < 0:
            continue
        a = np.random.randint(L[i])
        b = np.random.randint(L[j])
        P[i, a], P[j, b] = P[j, b], P[i, a]
        return op
    return -1


@njit(cache=True)
def _ga(popP, popL, cd, cv, prev, prev_len, R, alpha, eps, generations, seed, tour, elite, max_mut):
    np.random.seed(seed)
    n_pop = popP.shape[0]
    fit = np.empty(n_pop)
    for m in range(n_pop):
        fit[m] = _fit(popP[m], popL[m], cd, cv, prev, prev_len, R, alpha, eps)
    b = int(np.argmax(fit))
    bestP = popP[b].copy()
    bestL = popL[b].copy()
    best_fit = fit[b]
    trace = np.empty(generations + 1)
    trace[0] = best_fit
    newP = np.empty_like(popP)
    newL = np.empty_like(popL)
    newfit = np.empty(n_pop)
    for g in range(generations):
        order = np.argsort(-fit, kind="mergesort")
        for e in range(min(elite, n_pop)):
            newP[e] = popP[order[e]]
            newL[e] = popL[order[e]]
            newfit[e] = fit[order[e]]
        for m in range(min(elite, n_pop), n_pop):
            w = np.random.randint(n_pop)
            for _ in range(tour - 1):
                c = np.random.randint(n_pop)
                if fit[c] > fit[w] or (fit[c] == fit[w] and c < w):
                    w = c
            newP[m] = popP[w]
            newL[m] = popL[w]
            k = 1
            while k < max_mut and np.random.random() < 0.5:
                k += 1
            for _ in range(k):
                _mutate(newP[m], newL[m])
            newfit[m] = _fit(newP[m], newL[m], cd, cv, prev, prev_len, R, alpha, eps)
            if newfit[m] > best_fit:
                best_fit = newfit[m]
                bestP[:] = newP[m]
                bestL[:] = newL[m]
        popP, newP = newP, popP
        popL, newL = newL, popL
        fit, newfit = newfit, fit
        trace[g + 1] = best_fit
    return bestP, bestL, best_fit, trace


@dataclass
class GAParams:
    generations: int = 700
    population: int = 32
    tournament: int = 3
    elite: int = 2
    max_mutations: int = 4


@dataclass
class GAResult:
    best: Individual
    trace: np.ndarray
    millis: float


def _encode(inds, ix, n_p, n):
    P = np.full((len(inds), n_p, max(n, 1)), -1, dtype=np.int64)
    L = np.zeros((len(inds), n_p), dtype=np.int64)
    for m, ind in enumerate(inds):
        for i, path in enumerate(ind.paths):
            L[m, i] = len(path)
            P[m, i, :len(path)] = [ix[t] for t in path]
    return P, L


def init_population(prev_best: Individual | None, open_vcts, n_p: int, pop_size: int,
                    seed: int) -> list[Individual]:
    """Warm start from ``prev_best`` (executed tasks dropped, new ones inserted
    at random path/position) or a uniform random partition without one."""
    rng = np.random.default_rng(seed)
    open_list = list(open_vcts)
    open_set = set(open_list)
    pop = []
    if prev_best is not None:
        base = [[t for t in p if t in open_set] for p in prev_best.paths]
        held = {t for p in base for t in p}
        new = [t for t in open_list if t not in held]
        for _ in range(pop_size):
            paths = [list(p) for p in base]
            for t in new:
                i = int(rng.integers(n_p))
                paths[i].insert(int(rng.integers(len(paths[i]) + 1)), t)
            pop.append(Individual(paths))
        return pop
    for _ in range(pop_size):
        paths = [[] for _ in range(n_p)]
        for t in rng.permutation(np.array(open_list, dtype=np.int64)).tolist():
            paths[int(rng.integers(n_p))].append(t)
        pop.append(Individual(paths))
    return pop


def filter_prev(prev: Individual | None, open_ids) -> Individual | None:
    if prev is None:
        return None
    s = set(open_ids)
    return Individual([[t for t in p if t in s] for p in prev.paths])


def run_ga(population: list[Individual], model: AssignmentCostModel, prev_best: Individual | None,
           generations: int, seed: int, params: GAParams | None = None) -> GAResult:
    """Mutation-only GA with tournament selection and elitism; returns the
    best individual ever seen and the best-so-far fitness per generation."""
    params = params or GAParams()
    t0 = time.perf_counter()
    ids = model.ids if model.ids is not None else list(range(model.c_vct.shape[0]))
    ix = model.index()
    n, n_p = len(ids), model.c_d_vct.shape[0]
    popP, popL = _encode(population, ix, n_p, n)
    prev = filter_prev(prev_best, ids)
    prev_paths = prev.paths if prev is not None else [[] for _ in range(n_p)]
    prevP, prevL = _encode([Individual(prev_paths)], ix, n_p, n)
    cd = np.ascontiguousarray(model.c_d_vct, dtype=float).reshape(n_p, max(n, 1)) if n else np.zeros((n_p, 1))
    cv = np.ascontiguousarray(model.c_vct, dtype=float) if n else np.zeros((1, 1))
    bestP, bestL, best_fit, trace = _ga(popP, popL, cd, cv, prevP[0], prevL[0], float(model.R),
                                       float(model.alpha), float(model.eps), int(generations),
                                       int(seed) % (2 ** 32), params.tournament, params.elite,
                                       params.max_mutations)
    paths = [[ids[int(x)] for x in bestP[i, :bestL[i]]] for i in range(n_p)]
    return GAResult(Individual(paths, float(best_fit)), trace, (time.perf_counter() - t0) * 1e3)


# the assignment cycle -------------------------------------------------------------

@dataclass
class AssignParams:
    R: float = 50.0
    alpha: float = 0.1
    eps: float = 1e-4
    ga: GAParams = field(default_factory=GAParams)


def _anchor(grid: VoxelGrid, v: VCT, passable: np.ndarray) -> np.ndarray:
    idx = grid.index_of(v.p_avg)
    if grid.in_bounds(idx) and passable[idx]:
        return v.p_avg
    return next(iter(v.vps.values()))


def build_cost_model(vcts: VCTSet, positions, grid: VoxelGrid, passable: np.ndarray,
                     params: AssignParams) -> AssignmentCostModel:
    """Depot and inter-task matrices; inter-task lengths come from the cache
    and are filled lazily with one multi-target search per task."""
    ids = vcts.ids()
    n = len(ids)
    anchors = {t: _anchor(grid, vcts.vcts[t], passable) for t in ids}
    h = np.array([vcts.vcts[t].h_cost for t in ids])
    cd = np.zeros((len(positions), n))
    for i, p in enumerate(positions):
        if n == 0:
            break
        d = path_lengths(grid, p, [anchors[t] for t in ids], passable)
        euc = np.linalg.norm(np.array([anchors[t] for t in ids]) - np.asarray(p), axis=1)
        cd[i] = np.where(np.isfinite(d), d, euc) + h
    cv = np.zeros((n, n))
    for a_i, a in enumerate(ids):
        missing = [b for b in ids if b != a and (a, b) not in vcts.l_cost]
        if missing:
            va = vcts.vcts[a]
            if va.anchor is None:
                va.anchor = va.p_avg.copy()
            d = path_lengths(grid, anchors[a], [anchors[b] for b in missing], passable)
            for b, db in zip(missing, d):
                if not np.isfinite(db):
                    db = float(np.linalg.norm(anchors[a] - anchors[b]))
                vcts.l_cost[(a, b)] = float(db)
                vcts.l_cost[(b, a)] = float(db)
                if vcts.vcts[b].anchor is None:
                    vcts.vcts[b].anchor = vcts.vcts[b].p_avg.copy()
        for b_i, b in enumerate(ids):
            if a != b:
                cv[a_i, b_i] = vcts.l_cost[(a, b)] + h[b_i]
    return AssignmentCostModel(cd, cv, params.R, params.alpha, params.eps, ids)


@dataclass
class AssignmentResult:
    best: Individual
    k_same: list[int]
    trace: np.ndarray
    millis: float
    n_vct: int

    def as_dict(self, cycle: int) -> dict:
        return {"cycle": cycle, "n_vct": self.n_vct, "best_fitness": self.best.fitness,
                "k_same": self.k_same, "ga_millis": round(self.millis, 3)}


def repair_idle(ind: Individual, model: AssignmentCostModel, prev: Individual | None) -> Individual:
    """Give an idle photographer its cheapest task when that improves fitness."""
    ix = model.index()
    for i, path in enumerate(ind.paths):
        if path or not ind.flat():
            continue
        t = min(ind.flat(), key=lambda x: (model.c_d_vct[i, ix[x]], x))
        trial = Individual([[x for x in p if x != t] for p in ind.paths])
        trial.paths[i] = [t]
        trial.fitness = fitness(trial, prev, model)
        if trial.fitness > ind.fitness + 1e-12:
            ind = trial
    return ind


def assignment_cycle(model: AssignmentCostModel, prev_published: Individual | None, n_p: int,
                     params: AssignParams, seed: int, warm: bool = True) -> AssignmentResult:
    """Warm-started GA over the open tasks; returns the paths to publish."""
    ids = model.ids if model.ids is not None else list(range(model.c_vct.shape[0]))
    prev = filter_prev(prev_published, ids)
    if not ids:
        best = Individual([[] for _ in range(n_p)], 0.0)
        return AssignmentResult(best, [0] * n_p, np.zeros(1), 0.0, 0)
    pop = init_population(prev if warm else None, ids, n_p, params.ga.population, seed)
    res = run_ga(pop, model, prev, params.ga.generations, seed, params.ga)
    best = repair_idle(res.best, model, prev)
    k_same = [common_prefix(p, q) for p, q in zip(best.paths, prev.paths)] if prev else [0] * n_p
    return AssignmentResult(best, k_same, res.trace, res.millis, len(ids))
