"""Deterministic fixed-step engine that drives the explorer and the photographers."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import assign as asg
from .coverage import CoverageParams, CoveragePlanner
from .explore import (FrontierTracker, NoTarget, ViewpointSampling, plan_exploration_step,
                      refresh_viewpoints)
from .photographer import (Idle, Limits, Trajectory, generate_trajectory, on_viewpoint_reached,
                           plan_local_path)
from .scenario import Scenario, build_truth
from .sensors import CameraModel, LidarParams, lidar_scan
from .world import VoxelGrid, distance_field, integrate_scan, passable_mask

log = logging.getLogger(__name__)

UNREACHABLE_RETRIES = 3


@dataclass
class AgentState:
    name: str
    role: str
    pos: np.ndarray
    yaw: float
    limits: Limits
    pitch: float = 0.0
    traj: Trajectory | None = None
    t_traj: float = 0.0
    path_length: float = 0.0
    speed_integral: float = 0.0
    flight_time: float = 0.0
    global_path: list[int] = field(default_factory=list)
    plan: list[int] = field(default_factory=list)
    visited: list[int] = field(default_factory=list)
    rows: list[str] = field(default_factory=list)
    max_speed: float = 0.0
    max_accel: float = 0.0
    min_clearance: float = float("inf")

    @property
    def at_rest(self) -> bool:
        return self.traj is None or self.t_traj >= self.traj.duration - 1e-12

    def log_pose(self, t: float, v: float) -> None:
        self.rows.append(f"{t:.3f},{self.name},{self.pos[0]:.6f},{self.pos[1]:.6f},{self.pos[2]:.6f},"
                         f"{self.yaw:.6f},{self.pitch:.6f},{v:.6f}")


@dataclass
class Metrics:
    complete: bool
    ticks: int
    sim_time: float
    exploration_done_time: float | None
    completion_time: float
    agents: dict
    viewpoint_count: int
    visited_viewpoints: int
    retired_viewpoints: int
    coverage_rate: float
    captured_rate: float
    extracted_points: int
    stored_points_extracted_voxels: int
    extraction_events: int
    abandoned_points: int
    abandoned_frontier_cells: int
    assignment_cycles: int
    coverage_cycles: int
    mean_k_same: float
    k_same_trace: list
    best_fitness_trace: list
    safety: dict

    def to_dict(self) -> dict:
        return dict(vars(self))


class Engine:
    def __init__(self, sc: Scenario, seed: int | None = None, keep_trajectories: bool = False):
        self.sc = sc
        self.keep_trajectories = keep_trajectories
        self.trajectories: list[tuple[str, Trajectory]] = []
        self.seed = sc.seed if seed is None else seed
        self.rng = np.random.default_rng(self.seed)
        self.truth = build_truth(sc, seed=0)
        self.grid: VoxelGrid = self.truth.blank_copy(seed=int(self.rng.integers(2 ** 31)))
        self.lidar = LidarParams(**{**sc.lidar, "elevation_angles": tuple(sc.lidar["elevation_angles"])})
        self.cam = CameraModel(**sc.camera)
        self.tracker = FrontierTracker(self.grid, sc.frontier_max_extent)
        self.sampling = ViewpointSampling(max_range=self.lidar.max_range)
        self.coverage = CoveragePlanner(self.cam, CoverageParams(
            D=sc.D, r_q=sc.r_q, coverage_threshold=sc.coverage_threshold, max_rounds=sc.max_rounds,
            k_normals=sc.k_normals, r_near_voxels=sc.r_near_voxels, cluster_extent=sc.surface_cluster_extent))
        self.vcts = asg.VCTSet(d_thr=sc.d_thr, lam_h=sc.lambda_h)
        self.assign_params = asg.AssignParams(sc.R, sc.alpha, sc.epsilon,
                                              asg.GAParams(sc.K_GA, sc.ga_population))
        ex, ph = sc.resolved_starts()
        self.explorer = AgentState("explorer", "explorer", ex.copy(), 0.0, Limits(**sc.explorer_limits))
        self.photographers = [AgentState(f"photographer{i}", "photographer", p.copy(), 0.0,
                                         Limits(**sc.photographer_limits)) for i, p in enumerate(ph)]
        self.viewpoints = {}
        self.visited: set[int] = set()
        self.retired: set[int] = set()
        self.unreachable_count: dict[int, int] = {}
        self.published: asg.Individual | None = None
        self.assigned_version = -1
        self.attempts: dict[int, int] = {}
        self.dormant_age: dict[int, int] = {}
        self.explorer_target: int | None = None
        self.tick = 0
        self.cycle = 0
        self.events: list[dict] = []
        self.cycle_log: list[dict] = []
        self.k_same: list[list[int]] = []
        self.fitness_trace: list[float] = []
        self.exploration_done_time: float | None = None
        self.dfield_truth = distance_field(self.truth)
        self.passable = np.zeros(self.grid.dims, dtype=bool)
        self.free = np.zeros(self.grid.dims, dtype=bool)
        for a in self.agents:
            a.log_pose(0.0, 0.0)

    @property
    def agents(self) -> list[AgentState]:
        return [self.explorer] + self.photographers

    @property
    def t(self) -> float:
        return self.tick * self.sc.dt

    # frontier bookkeeping ---------------------------------------------------
    def exhausted(self, cell: int) -> bool:
        return (self.attempts.get(cell, 0) >= self.sc.frontier_attempts
                or self.dormant_age.get(cell, 0) >= self.sc.dormant_cycles)

    def live_clusters(self):
        return [c for c in sorted(self.tracker.clusters.values(), key=lambda c: c.id)
                if not all(self.exhausted(f) for f in c.cells)]

    def live_frontier_cells(self) -> set[int]:
        return {f for f in self.tracker.cells if not self.exhausted(f)}

    @property
    def exploration_finished(self) -> bool:
        return not self.live_clusters()

    # planning cycle -----------------------------------------------------------
    def _emit(self, kind: str, **kw) -> dict:
        ev = {"t": round(self.t, 6), "kind": kind, **kw}
        self.events.append(ev)
        return ev

    def planning_cycle(self) -> None:
        self.cycle += 1
        hits, misses = lidar_scan(self.truth, self.explorer.pos, self.explorer.yaw, self.lidar)
        changed = integrate_scan(self.grid, self.explorer.pos, hits, misses)
        if changed:
            self.tracker.update(self.grid, changed)
        df = distance_field(self.grid, unknown_as_obstacle=True)
        self.passable = passable_mask(self.grid, df, self.sc.r_s)
        self.free = passable_mask(self.grid)
        refresh_viewpoints(self.tracker.clusters.values(), self.grid, self.passable, self.sampling)
        for c in self.tracker.clusters.values():
            if c.dormant:
                for f in c.cells:
                    self.dormant_age[f] = self.dormant_age.get(f, 0) + 1
        if self.exploration_done_time is None and self.exploration_finished:
            self.exploration_done_time = self.t
            self._emit("exploration_done")

        new = self.coverage.update(self.grid, self.live_frontier_cells(), self.passable)
        rep = self.coverage.reports[-1] if self.coverage.reports else None
        if rep is not None and rep.cycle == self.coverage.cycle_no and (new or rep.new_points):
            self.cycle_log.append({"kind": "coverage", "t": round(self.t, 6), **rep.as_dict()})
        for vp in new:
            self.viewpoints[vp.id] = vp
            asg.add_viewpoint(self.vcts, vp.id, vp.pos, self.grid)

        if self.vcts.version != self.assigned_version:
            self.assignment()
        self.plan_explorer()

    def assignment(self) -> None:
        positions = [p.pos for p in self.photographers]
        model = asg.build_cost_model(self.vcts, positions, self.grid, self.free, self.assign_params)
        seed = int(self.rng.integers(2 ** 31))
        res = asg.assignment_cycle(model, self.published, len(self.photographers), self.assign_params, seed)
        self.assigned_version = self.vcts.version
        self.published = res.best
        for p, path in zip(self.photographers, res.best.paths):
            p.global_path = list(path)
        self.k_same.append(res.k_same)
        self.fitness_trace.append(res.best.fitness)
        self.cycle_log.append({"kind": "assignment", "t": round(self.t, 6), **res.as_dict(len(self.k_same))})

    def plan_explorer(self) -> None:
        ex = self.explorer
        if not ex.at_rest:
            return
        if self.explorer_target is not None:
            cl = self.tracker.clusters.get(self.explorer_target)
            if cl is not None:
                for f in cl.cells:
                    self.attempts[f] = self.attempts.get(f, 0) + 1
            self.explorer_target = None
        live = [c for c in self.live_clusters() if not c.dormant and c.viewpoint is not None]
        if not live:
            ex.traj = None
            return
        seed = int(self.rng.integers(2 ** 31))
        try:
            order = plan_exploration_step(self.grid, ex.pos, ex.yaw, live, ex.limits.v_max,
                                          ex.limits.yaw_rate_max, seed, self.passable)
        except NoTarget:
            ex.traj = None
            return
        target = order[0]
        traj = generate_trajectory(ex.pos, ex.yaw, 0.0, [(target.id, target.viewpoint, 0.0, target.yaw)],
                                   self.grid, self.passable, ex.limits)
        self.explorer_target = target.id
        self._start(ex, traj)
        self._emit("explorer_target", cluster=target.id, pos=[round(float(v), 6) for v in target.viewpoint])

    def _start(self, agent: AgentState, traj: Trajectory) -> None:
        agent.traj = traj if traj.pieces else None
        agent.t_traj = 0.0
        if self.keep_trajectories and agent.traj is not None:
            self.trajectories.append((agent.name, traj))

    def plan_photographer(self, p: AgentState) -> None:
        members = {t: list(v.vps) for t, v in self.vcts.vcts.items()}
        path = [t for t in p.global_path if t in members]
        if not path:
            p.plan = []
            return
        seed = int(self.rng.integers(2 ** 31))
        try:
            plan = plan_local_path(p.pos, p.yaw, path, members, self.viewpoints, self.grid, self.passable,
                                   self.sc.K_local, p.limits, seed)
        except Idle:
            p.plan = []
            return
        reachable = [v for v in plan.order if v not in plan.unreachable]
        for v in plan.unreachable:
            self._unreachable(p, v)
        wps = [(v, self.viewpoints[v].pos, self.viewpoints[v].pitch, self.viewpoints[v].yaw)
               for v in reachable[: self.sc.M_kc]]
        traj = generate_trajectory(p.pos, p.yaw, p.pitch, wps, self.grid, self.passable, p.limits)
        for v in traj.dropped:
            self._unreachable(p, v)
        p.plan = traj.targets()
        self._start(p, traj)

    def _unreachable(self, p: AgentState, vp_id: int) -> None:
        n = self.unreachable_count.get(vp_id, 0) + 1
        self.unreachable_count[vp_id] = n
        self._emit("viewpoint_unreachable", agent=p.name, viewpoint=vp_id, count=n)
        if n >= UNREACHABLE_RETRIES and vp_id in self.vcts.member_of:
            asg.mark_visited(self.vcts, self.vcts.member_of[vp_id], vp_id)
            self.retired.add(vp_id)
            self._emit("viewpoint_retired", viewpoint=vp_id)

    # stepping --------------------------------------------------------------------
    def _visit(self, p: AgentState, vp_id: int) -> None:
        if vp_id in self.visited or vp_id not in self.vcts.member_of:
            return
        self.visited.add(vp_id)
        p.visited.append(vp_id)
        asg.mark_visited(self.vcts, self.vcts.member_of[vp_id], vp_id)
        self._emit("visit", agent=p.name, viewpoint=vp_id)

    def _advance(self, a: AgentState, dt: float) -> None:
        if a.traj is None or a.at_rest:
            return
        t0, t1 = a.t_traj, min(a.t_traj + dt, a.traj.duration)
        if a.role == "photographer":
            for pc in a.traj.pieces:
                if t0 < pc.t1 <= t1 and pc.target >= 0:
                    s = a.traj.sample(pc.t1)
                    if pc.target in self.viewpoints and on_viewpoint_reached(
                            s.pos, s.yaw, s.pitch, self.viewpoints[pc.target], self.sc.eps_pos, self.sc.eps_ang):
                        self._visit(a, pc.target)
        s = a.traj.sample(t1)
        step = float(np.linalg.norm(s.pos - a.pos))
        a.path_length += step
        a.speed_integral += s.speed * dt
        if step > 0 or t1 > t0:
            a.flight_time = self.t + dt
        a.pos, a.yaw, a.pitch = s.pos, s.yaw, s.pitch
        a.t_traj = t1
        a.max_speed = max(a.max_speed, s.speed)
        a.max_accel = max(a.max_accel, s.acc)
        a.min_clearance = min(a.min_clearance, self.dfield_truth.at(s.pos))
        if a.role == "photographer":
            for v in a.plan:
                if v in self.viewpoints and v not in self.visited and on_viewpoint_reached(
                        a.pos, a.yaw, a.pitch, self.viewpoints[v], self.sc.eps_pos, self.sc.eps_ang):
                    self._visit(a, v)

    def step(self) -> list[dict]:
        n_before = len(self.events)
        plan_tick = self.tick % self.sc.plan_every == 0
        if plan_tick:
            self.planning_cycle()
        for p in self.photographers:
            if p.at_rest and (plan_tick or p.traj is not None):
                p.traj = None
                self.plan_photographer(p)
        for a in self.agents:
            self._advance(a, self.sc.dt)
        self.tick += 1
        for a in self.agents:
            v = a.traj.sample(a.t_traj).speed if a.traj is not None else 0.0
            a.log_pose(self.t, v)
        return self.events[n_before:]

    @property
    def finished(self) -> bool:
        return (self.tick > 0 and self.exploration_finished and len(self.vcts) == 0
                and not self.coverage.residual and not self._pending_surface()
                and all(a.at_rest for a in self.agents))

    def run(self, max_ticks: int | None = None) -> Metrics:
        budget = self.sc.max_ticks if max_ticks is None else max_ticks
        while self.tick < budget and not self.finished:
            self.step()
        return self.metrics(complete=self.finished)

    def _pending_surface(self) -> bool:
        return bool(np.any(self.grid.surface & ~self.grid.extracted))

    # results ------------------------------------------------------------------------
    def metrics(self, complete: bool) -> Metrics:
        cov = self.coverage
        ext = np.flatnonzero(self.grid.extracted)
        stored = int(sum(len(self.grid.points.get(f, ())) for f in ext.tolist()))
        captured = sum(len(cov.index.vp_to_points.get(v, ())) for v in self.visited)
        agents = {a.name: {"role": a.role, "flight_time": round(a.flight_time, 6),
                           "path_length": a.path_length, "speed_integral": a.speed_integral,
                           "visited": len(a.visited)} for a in self.agents}
        ks = [k for row in self.k_same[1:] for k in row]
        photo_t = [a.flight_time for a in self.photographers]
        return Metrics(
            complete=bool(complete), ticks=self.tick, sim_time=round(self.t, 6),
            exploration_done_time=self.exploration_done_time,
            completion_time=round(max(photo_t) if photo_t else 0.0, 6), agents=agents,
            viewpoint_count=len(cov.cv_hq), visited_viewpoints=len(self.visited),
            retired_viewpoints=len(self.retired), coverage_rate=cov.coverage_rate(),
            captured_rate=captured / cov.n_points if cov.n_points else 1.0,
            extracted_points=cov.n_points, stored_points_extracted_voxels=stored,
            extraction_events=self.grid.extraction_events, abandoned_points=len(cov.abandoned),
            abandoned_frontier_cells=sum(1 for f in self.tracker.cells if self.exhausted(f)),
            assignment_cycles=len(self.k_same), coverage_cycles=cov.cycle_no,
            mean_k_same=float(np.mean(ks)) if ks else 0.0, k_same_trace=self.k_same,
            best_fitness_trace=self.fitness_trace,
            safety={a.name: {"max_speed": a.max_speed, "max_accel": a.max_accel,
                             "min_clearance": a.min_clearance, "v_max": a.limits.v_max,
                             "a_max": a.limits.a_max} for a in self.agents},
        )


def export_results(engine: Engine, metrics: Metrics, out_dir) -> list[str]:
    """Write metrics.json, poses_<agent>.csv, cycles.jsonl, events.jsonl and summary.md."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    path = os.path.join(out_dir, "metrics.json")
    with open(path, "w") as fh:
        json.dump(metrics.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append(path)
    for a in engine.agents:
        path = os.path.join(out_dir, f"poses_{a.name}.csv")
        with open(path, "w") as fh:
            fh.write("t,agent_id,x,y,z,yaw,pitch,v\n")
            fh.write("\n".join(a.rows) + "\n")
        files.append(path)
    for name, rows in (("cycles.jsonl", engine.cycle_log), ("events.jsonl", engine.events)):
        path = os.path.join(out_dir, name)
        with open(path, "w") as fh:
            for r in rows:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        files.append(path)
    path = os.path.join(out_dir, "summary.md")
    with open(path, "w") as fh:
        fh.write(summary_markdown(metrics))
    files.append(path)
    return files


def summary_markdown(m: Metrics) -> str:
    status = "complete" if m.complete else "INCOMPLETE (tick budget exhausted)"
    lines = [f"# Run summary ({status})", "",
             "| Agent | Role | Time (s) | Path Length (m) | Viewpoints visited |",
             "|---|---|---|---|---|"]
    for name, a in m.agents.items():
        lines.append(f"| {name} | {a['role']} | {a['flight_time']:.1f} | {a['path_length']:.1f} | {a['visited']} |")
    lines += ["", "| Viewpoint Num | Coverage Rate | Completion Time (s) | Exploration Done (s) |",
              "|---|---|---|---|",
              f"| {m.viewpoint_count} | {100 * m.coverage_rate:.1f}% | {m.completion_time:.1f} | "
              f"{'-' if m.exploration_done_time is None else f'{m.exploration_done_time:.1f}'} |", ""]
    return "\n".join(lines)


def run_scenario(sc: Scenario, seed: int | None = None, out_dir=None, max_ticks: int | None = None):
    eng = Engine(sc, seed)
    m = eng.run(max_ticks)
    if out_dir is not None:
        export_results(eng, m, out_dir)
    return eng, m
