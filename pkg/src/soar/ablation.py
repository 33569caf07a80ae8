"""Scripted incremental assignment scenario for the warm-start and
consistency ablations.

Tasks are points on a 100 m square with straight-line costs. Every cycle a
few new tasks appear, each photographer completes the head of its published
path (moving to that task) and the assigner runs again.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assign import (AssignmentCostModel, AssignParams, GAParams, Individual, assignment_cycle, filter_prev,
                     init_population, run_ga)


@dataclass
class ScriptedRun:
    k_same: list[list[int]] = field(default_factory=list)
    fitness: list[float] = field(default_factory=list)
    models: list[AssignmentCostModel] = field(default_factory=list)
    prevs: list[Individual | None] = field(default_factory=list)


def _model(pos: dict[int, np.ndarray], depots: np.ndarray, lam: float, R: float, alpha: float,
           eps: float) -> AssignmentCostModel:
    ids = sorted(pos)
    P = np.array([pos[t] for t in ids]).reshape(-1, 2)
    h = np.full(len(ids), lam)
    cd = np.linalg.norm(depots[:, None, :] - P[None, :, :], axis=2) + h[None, :]
    cv = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2) + h[None, :]
    np.fill_diagonal(cv, 0.0)
    return AssignmentCostModel(cd, cv, R, alpha, eps, ids)


def scripted_run(seed: int, R: float = 50.0, alpha: float = 0.1, eps: float = 1e-4, cycles: int = 10,
                 n_p: int = 3, initial: int = 8, per_cycle: tuple[int, int] = (2, 4),
                 generations: int = 700, warm: bool = True, side: float = 100.0) -> ScriptedRun:
    """Play the scenario; the task stream depends only on ``seed``."""
    world = np.random.default_rng(seed)
    depots = world.uniform(0, side, size=(n_p, 2))
    pos: dict[int, np.ndarray] = {}
    next_id = 0
    for _ in range(initial):
        pos[next_id] = world.uniform(0, side, 2)
        next_id += 1
    arrivals = [int(world.integers(per_cycle[0], per_cycle[1] + 1)) for _ in range(cycles)]
    extra = [world.uniform(0, side, size=(a, 2)) for a in arrivals]
    params = AssignParams(R, alpha, eps, GAParams(generations=generations))
    prev: Individual | None = None
    out = ScriptedRun()
    for c in range(cycles):
        if c > 0:
            for p in extra[c]:
                pos[next_id] = p
                next_id += 1
        model = _model(pos, depots, 6.0 * 0.6, R, alpha, eps)
        out.models.append(model)
        out.prevs.append(prev)
        res = assignment_cycle(model, prev, n_p, params, seed * 1000 + c, warm=warm)
        out.k_same.append(res.k_same)
        out.fitness.append(res.best.fitness)
        prev = res.best
        # each photographer completes the head of its path
        for i, path in enumerate(prev.paths):
            if path:
                depots[i] = pos.pop(path[0])
        prev = filter_prev(prev, sorted(pos))
    return out


def mean_k_same(run: ScriptedRun) -> float:
    """Mean prefix length over every cycle that had a previous assignment."""
    ks = [k for row in run.k_same[1:] for k in row]
    return float(np.mean(ks)) if ks else 0.0


def warm_vs_cold(seed: int, generations: int = 700, tol: float = 0.01, **kw) -> list[float]:
    """Per cycle (from the second on): fraction of ``generations`` the warm
    start needs to come within ``tol`` of the cold start's final fitness."""
    run = scripted_run(seed, generations=generations, **kw)
    n_p = run.models[0].c_d_vct.shape[0]
    frac = []
    for c in range(1, len(run.models)):
        model, prev = run.models[c], run.prevs[c]
        ids = model.ids
        gs = seed * 1000 + c
        cold = run_ga(init_population(None, ids, n_p, 32, gs), model, prev, generations, gs)
        warm = run_ga(init_population(filter_prev(prev, ids), ids, n_p, 32, gs), model, prev, generations, gs)
        target = cold.best.fitness - tol * abs(cold.best.fitness)
        hit = np.flatnonzero(warm.trace >= target)
        g = int(hit[0]) if len(hit) else generations
        frac.append(g / generations)
    return frac


__all__ = ["ScriptedRun", "scripted_run", "mean_k_same", "warm_vs_cold"]
