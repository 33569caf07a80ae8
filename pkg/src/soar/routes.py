"""Open-tour ATSP cost matrices and a local-search ATSP solver."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .world import VoxelGrid, passable_mask, path_lengths

log = logging.getLogger(__name__)

UNREACHABLE_COST = 1e6


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


def yaw_gap(a: float, b: float) -> float:
    """|a - b| folded into [0, pi]."""
    return abs(wrap_angle(a - b))


@dataclass
class AtspMatrix:
    """Cost matrix with the start at index 0 and a free return to it."""

    cost: np.ndarray
    has_sentinel: bool = False

    @property
    def n(self) -> int:
        return self.cost.shape[0]

    def __post_init__(self):
        self.cost = np.array(self.cost, dtype=float)
        self.cost[:, 0] = 0.0
        np.fill_diagonal(self.cost, 0.0)
        self.has_sentinel = bool(np.any(self.cost >= UNREACHABLE_COST))

    def tour_cost(self, order) -> float:
        seq = [0] + list(order)
        return float(sum(self.cost[a, b] for a, b in zip(seq, seq[1:])))


def pairwise_cost(grid: VoxelGrid, start, goal, v_max: float, yaw_rate_max: float,
                  passable: np.ndarray | None = None) -> float:
    """max(path length / v_max, |yaw change| / yaw_rate_max) in seconds.

    Poses are ``(position, yaw)``. An unreachable goal costs
    ``UNREACHABLE_COST``.
    """
    (p0, y0), (p1, y1) = start, goal
    length = path_lengths(grid, p0, [p1], passable)[0]
    if not np.isfinite(length):
        return UNREACHABLE_COST
    return max(length / v_max, yaw_gap(y0, y1) / yaw_rate_max)


def build_atsp_matrix(grid: VoxelGrid, start, nodes, v_max: float, yaw_rate_max: float,
                      passable: np.ndarray | None = None) -> AtspMatrix:
    """(N+1)x(N+1) matrix over ``[start] + nodes``; column 0 is zero."""
    if not nodes:
        raise ValueError("build_atsp_matrix needs at least one node")
    if passable is None:
        passable = passable_mask(grid)
    poses = [start] + list(nodes)
    pos = np.array([np.asarray(p, dtype=float) for p, _ in poses])
    yaws = [float(y) for _, y in poses]
    n = len(poses)
    cost = np.zeros((n, n))
    for i in range(n):
        lengths = path_lengths(grid, pos[i], pos[1:], passable)
        for j in range(1, n):
            if i == j:
                continue
            if not np.isfinite(lengths[j - 1]):
                cost[i, j] = UNREACHABLE_COST
            else:
                cost[i, j] = max(lengths[j - 1] / v_max, yaw_gap(yaws[i], yaws[j]) / yaw_rate_max)
    return AtspMatrix(cost)


# local search ---------------------------------------------------------------

def _nearest_neighbor(c: np.ndarray) -> list[int]:
    n = c.shape[0]
    left = set(range(1, n))
    order, cur = [], 0
    while left:
        nxt = min(left, key=lambda j: (c[cur, j], j))
        order.append(nxt)
        left.remove(nxt)
        cur = nxt
    return order


def _two_opt_pass(c: np.ndarray, seq: list[int]) -> bool:
    """First-improvement directed 2-opt on ``seq`` (seq[0] is the start and the
    tour implicitly returns to it). Mutates ``seq``; True if a move applied."""
    m = len(seq)
    ext = seq + [0]
    fwd = np.concatenate([[0.0], np.cumsum([c[ext[k], ext[k + 1]] for k in range(m - 1)])])
    rev = np.concatenate([[0.0], np.cumsum([c[ext[k + 1], ext[k]] for k in range(m - 1)])])
    for i in range(1, m - 1):
        for j in range(i + 1, m):
            a, b = ext[i - 1], ext[i]
            e, f = ext[j], ext[j + 1]
            old = c[a, b] + (fwd[j] - fwd[i]) + c[e, f]
            new = c[a, e] + (rev[j] - rev[i]) + c[b, f]
            if new < old - 1e-12:
                seq[i:j + 1] = seq[i:j + 1][::-1]
                return True
    return False


def _or_opt_pass(c: np.ndarray, seq: list[int]) -> bool:
    """Move a block of 1-3 nodes (optionally reversed) elsewhere."""
    m = len(seq)
    for seg in (1, 2, 3):
        for i in range(1, m - seg + 1):
            block = seq[i:i + seg]
            prev = seq[i - 1]
            nxt = seq[i + seg] if i + seg < m else 0
            gain = c[prev, block[0]] + c[block[-1], nxt] - c[prev, nxt]
            inner_f = sum(c[block[k], block[k + 1]] for k in range(seg - 1))
            inner_r = sum(c[block[k + 1], block[k]] for k in range(seg - 1))
            rest = seq[:i] + seq[i + seg:]
            for pos in range(1, len(rest) + 1):
                if pos == i:
                    continue
                u = rest[pos - 1]
                w = rest[pos] if pos < len(rest) else 0
                base = -c[u, w] - gain
                if base + c[u, block[0]] + c[block[-1], w] < -1e-12:
                    seq[:] = rest[:pos] + block + rest[pos:]
                    return True
                if seg > 1 and base + c[u, block[-1]] + c[block[0], w] + inner_r - inner_f < -1e-12:
                    seq[:] = rest[:pos] + block[::-1] + rest[pos:]
                    return True
    return False


def _path_cost(c: np.ndarray, seq: list[int]) -> float:
    return float(sum(c[a, b] for a, b in zip(seq, seq[1:])))


def _local_search(c: np.ndarray, order: list[int]) -> list[int]:
    """Descend until neither pass helps.

    The passes score moves incrementally, which rounds badly once sentinel
    costs are involved, so each move is re-checked on the full path cost and
    must lower it by a relative margin. That keeps the descent finite.
    """
    seq = [0] + list(order)
    cur = _path_cost(c, seq)
    while True:
        for move in (_two_opt_pass, _or_opt_pass):
            trial = list(seq)
            if move(c, trial):
                new = _path_cost(c, trial)
                if new < cur - 1e-9 * max(1.0, abs(cur)):
                    seq, cur = trial, new
                    break
        else:
            return seq[1:]


def solve_atsp(m: AtspMatrix, seed: int = 0, restarts: int = 4) -> list[int]:
    """Open Hamiltonian path from node 0 visiting every other node.

    Nearest-neighbor start plus 2-opt / Or-opt descent, best of ``restarts``
    starts (the first is the nearest-neighbor tour itself).
    """
    c = m.cost
    n = m.n
    if n < 2:
        raise ValueError("solve_atsp needs at least one node besides the start")
    if n == 2:
        return [1]
    rng = np.random.default_rng(seed)
    best = _local_search(c, _nearest_neighbor(c))
    best_cost = m.tour_cost(best)
    for _ in range(restarts - 1):
        start = (rng.permutation(n - 1) + 1).tolist()
        cand = _local_search(c, start)
        cc = m.tour_cost(cand)
        if cc < best_cost - 1e-12:
            best, best_cost = cand, cc
    if m.has_sentinel and any(c[a, b] >= UNREACHABLE_COST for a, b in zip([0] + best, best)):
        log.warning("ATSP tour uses an unreachable edge")
    return best
