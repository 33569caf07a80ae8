"""Photographer local planning and rest-to-rest trajectory generation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .routes import UNREACHABLE_COST, AtspMatrix, solve_atsp, wrap_angle, yaw_gap
from .world import DistanceField, Unreachable, VoxelGrid, astar_path, path_lengths, segment_clear

log = logging.getLogger(__name__)

FORCE_LAST = 1e5


@dataclass(frozen=True)
class Limits:
    v_max: float = 1.0
    a_max: float = 1.0
    j_max: float = 1.0
    yaw_rate_max: float = 1.0

    def validate(self, who: str = "limits") -> list[str]:
        return [f"{who}.{k} must be > 0" for k, v in vars(self).items() if not v > 0]


# local planning -----------------------------------------------------------------

@dataclass
class LocalPlan:
    order: list[int]
    endpoint: np.ndarray | None = None
    unreachable: list[int] = field(default_factory=list)


class Idle(Exception):
    """Nothing assigned."""


def plan_local_path(pos, yaw: float, global_path, vcts, viewpoints, grid: VoxelGrid, passable: np.ndarray,
                    k_local: int = 2, limits: Limits = Limits(), seed: int = 0) -> LocalPlan:
    """Order the viewpoints of the first ``k_local`` tasks as an open ATSP.

    ``vcts`` maps task id -> member viewpoint ids (ordered), ``viewpoints``
    maps viewpoint id -> object with ``pos`` and ``yaw``. When a further task
    follows, its mean position is appended as an endpoint whose visit is
    forced last; it is not part of the returned order.
    """
    if not global_path:
        raise Idle("empty global path")
    ids = [vp for t in global_path[:k_local] for vp in vcts[t]]
    if not ids:
        raise Idle("assigned tasks have no viewpoints")
    end = None
    if len(global_path) > k_local:
        members = [viewpoints[v].pos for v in vcts[global_path[k_local]]]
        if members:
            end = np.mean(np.array(members), axis=0)
    poses = [(np.asarray(pos, dtype=float), float(yaw))] + [(viewpoints[v].pos, viewpoints[v].yaw) for v in ids]
    n = len(poses) + (end is not None)
    cost = np.zeros((n, n))
    targets = [p for p, _ in poses[1:]] + ([end] if end is not None else [])
    for i, (p, y) in enumerate(poses):
        lengths = path_lengths(grid, p, targets, passable)
        for j, (_, yj) in enumerate(poses[1:], start=1):
            if i != j:
                lj = lengths[j - 1]
                cost[i, j] = UNREACHABLE_COST if not np.isfinite(lj) else max(
                    lj / limits.v_max, yaw_gap(y, yj) / limits.yaw_rate_max)
        if end is not None:
            le = lengths[-1]
            cost[i, n - 1] = le / limits.v_max if np.isfinite(le) else FORCE_LAST
    if end is not None:
        cost[n - 1, 1:n - 1] = FORCE_LAST
    unreachable = [ids[j - 1] for j in range(1, len(poses)) if cost[0, j] >= UNREACHABLE_COST]
    order = solve_atsp(AtspMatrix(cost), seed=seed) if n > 2 else list(range(1, n))
    if end is not None:
        order = [o for o in order if o != n - 1]
    return LocalPlan([ids[o - 1] for o in order], end, unreachable)


# trajectories -------------------------------------------------------------------

@dataclass
class Segment:
    """Straight rest-to-rest move with a trapezoidal (or triangular) speed profile."""

    p0: np.ndarray
    p1: np.ndarray
    t0: float
    length: float
    accel: float
    v_peak: float
    t_acc: float
    t_flat: float

    @property
    def duration(self) -> float:
        return 2 * self.t_acc + self.t_flat

    @property
    def direction(self) -> np.ndarray:
        return (self.p1 - self.p0) / self.length if self.length > 0 else np.zeros(3)

    def state(self, tau: float):
        """(arc length, speed, |acceleration|) at local time ``tau``."""
        a, v, ta, tf = self.accel, self.v_peak, self.t_acc, self.t_flat
        if self.length == 0:
            return 0.0, 0.0, 0.0
        if tau <= ta:
            return 0.5 * a * tau * tau, a * tau, a
        if tau <= ta + tf:
            return 0.5 * a * ta * ta + v * (tau - ta), v, 0.0
        r = max(self.duration - tau, 0.0)
        return self.length - 0.5 * a * r * r, a * r, a


def trapezoid(length: float, limits: Limits) -> tuple[float, float, float, float]:
    """(accel, v_peak, t_acc, t_flat) for a rest-to-rest move.

    Acceleration is lowered until the ramp time v_peak / a is at least
    a / j_max, which keeps the implied jerk bounded.
    """
    if length <= 0:
        return 0.0, 0.0, 0.0, 0.0
    v, j = limits.v_max, limits.j_max
    a = min(limits.a_max, math.sqrt(v * j))
    if length < v * v / a:
        a = min(a, (length * j * j) ** (1.0 / 3.0))
        vp = math.sqrt(length * a)
        return a, vp, vp / a, 0.0
    return a, v, v / a, (length - v * v / a) / v


@dataclass
class Piece:
    """Motion from one waypoint to the next."""

    t0: float
    duration: float
    segments: list[Segment]
    start: np.ndarray
    end: np.ndarray
    yaw0: float
    dyaw: float
    pitch0: float
    dpitch: float
    target: int = -1

    @property
    def t1(self) -> float:
        return self.t0 + self.duration


@dataclass
class TrajSample:
    pos: np.ndarray
    yaw: float
    pitch: float
    vel: np.ndarray
    acc: float

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.vel))


@dataclass
class Trajectory:
    pieces: list[Piece]
    start: np.ndarray
    yaw: float
    pitch: float
    dropped: list[int] = field(default_factory=list)

    @property
    def duration(self) -> float:
        return self.pieces[-1].t1 if self.pieces else 0.0

    def end_pose(self):
        if not self.pieces:
            return self.start, self.yaw, self.pitch
        p = self.pieces[-1]
        return p.end, wrap_angle(p.yaw0 + p.dyaw), p.pitch0 + p.dpitch

    def sample(self, t: float) -> TrajSample:
        """Pose at ``t`` (clamped to the trajectory's time span)."""
        if not self.pieces:
            return TrajSample(self.start.copy(), self.yaw, self.pitch, np.zeros(3), 0.0)
        t = min(max(t, 0.0), self.duration)
        piece = self.pieces[-1]
        for pc in self.pieces:
            if t <= pc.t1:
                piece = pc
                break
        tau = t - piece.t0
        frac = 1.0 if piece.duration == 0 else min(tau / piece.duration, 1.0)
        yaw = wrap_angle(piece.yaw0 + frac * piece.dyaw)
        pitch = piece.pitch0 + frac * piece.dpitch
        for seg in piece.segments:
            if tau <= seg.t0 + seg.duration or seg is piece.segments[-1]:
                s, v, a = seg.state(tau - seg.t0)
                d = seg.direction
                return TrajSample(seg.p0 + s * d, yaw, pitch, v * d, a)
        return TrajSample(piece.end.copy(), yaw, pitch, np.zeros(3), 0.0)

    def targets(self) -> list[int]:
        return [p.target for p in self.pieces]


def shortcut(grid: VoxelGrid, pts: list[np.ndarray], passable: np.ndarray) -> list[np.ndarray]:
    """Greedy node skipping: from each kept node jump to the farthest node
    reachable by a straight passable segment."""
    if len(pts) <= 2:
        return list(pts)
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1 and not segment_clear(grid, pts[i], pts[j], passable):
            j -= 1
        out.append(pts[j])
        i = j
    return out


def _build_piece(t0: float, poly: list[np.ndarray], yaw0: float, yaw1: float, pitch0: float, pitch1: float,
                 limits: Limits, target: int) -> Piece:
    segs = []
    t = 0.0
    for a, b in zip(poly, poly[1:]):
        length = float(np.linalg.norm(b - a))
        if length < 1e-12:
            continue
        acc, vp, ta, tf = trapezoid(length, limits)
        segs.append(Segment(np.asarray(a, float), np.asarray(b, float), t, length, acc, vp, ta, tf))
        t += segs[-1].duration
    dyaw = wrap_angle(yaw1 - yaw0)
    dpitch = pitch1 - pitch0
    t_ang = max(abs(dyaw), abs(dpitch)) / limits.yaw_rate_max
    if t_ang > t and t > 0:
        k = t_ang / t
        t = 0.0
        for s in segs:
            s.accel /= k * k
            s.v_peak /= k
            s.t_acc *= k
            s.t_flat *= k
            s.t0 = t
            t += s.duration
    duration = max(t, t_ang)
    return Piece(t0, duration, segs, np.asarray(poly[0], float), np.asarray(poly[-1], float),
                 yaw0, dyaw, pitch0, dpitch, target)


def generate_trajectory(pos, yaw: float, pitch: float, waypoints, grid: VoxelGrid, passable: np.ndarray,
                        limits: Limits = Limits()) -> Trajectory:
    """Chain rest-to-rest pieces through ``waypoints``.

    Each waypoint is ``(id, position, pitch, yaw)``. Pieces follow the
    clearance-constrained A* polyline after shortcutting; every polyline
    corner is a stop. Unreachable waypoints are dropped and reported.
    """
    cur = np.asarray(pos, dtype=float)
    cy, cp = float(yaw), float(pitch)
    traj = Trajectory([], cur.copy(), cy, cp)
    t = 0.0
    for wid, wp, wpitch, wyaw in waypoints:
        wp = np.asarray(wp, dtype=float)
        try:
            poly, _ = astar_path(grid, cur, wp, passable=passable)
        except Unreachable:
            log.info("waypoint %s unreachable from %s; dropped", wid, cur.tolist())
            traj.dropped.append(wid)
            continue
        poly = shortcut(grid, poly, passable)
        piece = _build_piece(t, poly, cy, float(wyaw), cp, float(wpitch), limits, wid)
        traj.pieces.append(piece)
        t = piece.t1
        cur, cy, cp = wp, float(wyaw), float(wpitch)
    return traj


def on_viewpoint_reached(pos, yaw: float, pitch: float, vp, eps_pos: float = 0.3, eps_ang: float = 0.15) -> bool:
    """Pose within the visit tolerance of viewpoint ``vp`` (``pos``/``yaw``/``pitch``)."""
    return (float(np.linalg.norm(np.asarray(pos) - vp.pos)) <= eps_pos
            and yaw_gap(yaw, vp.yaw) <= eps_ang
            and abs(pitch - vp.pitch) <= eps_ang)


@dataclass
class TrajectoryCheck:
    max_speed: float
    max_accel: float
    min_clearance: float
    samples: int

    def ok(self, limits: Limits, r_s: float, tol: float = 1e-6) -> bool:
        return (self.max_speed <= limits.v_max + tol and self.max_accel <= limits.a_max + tol
                and self.min_clearance >= r_s - tol)


def check_trajectory(traj: Trajectory, dfield: DistanceField | None, rate: float = 100.0) -> TrajectoryCheck:
    """Dense sampling of kinematic limits and obstacle clearance."""
    n = max(int(math.ceil(traj.duration * rate)), 1)
    ts = np.linspace(0.0, traj.duration, n + 1)
    samples = [traj.sample(t) for t in ts]
    pos = np.array([s.pos for s in samples])
    clear = float(np.min(dfield.at_many(pos))) if dfield is not None else math.inf
    return TrajectoryCheck(max(s.speed for s in samples), max(s.acc for s in samples), clear, len(ts))
