"""Scenario files with their defaults and validation."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import scenes
from .world import FREE, SceneError, VoxelGrid, load_points_csv, voxelize_scene


class ScenarioError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


def _limits(v, a, j, w):
    return {"v_max": v, "a_max": a, "j_max": j, "yaw_rate_max": w}


BUILTIN_STARTS = {
    "box": [3.0, 3.0, 5.0],
    "building": [4.0, 4.0, 7.0],
    "corridor": [5.0, 5.0, 3.0],
}


@dataclass
class Scenario:
    scene: str
    n_photographers: int
    resolution: float = 0.5
    bounds: list[list[float]] | None = None
    explorer_start: list[float] | None = None
    photographer_starts: list[list[float]] | None = None
    dt: float = 0.1
    plan_period: float = 1.0
    seed: int = 0
    max_ticks: int = 30000
    # coverage
    D: float = 5.0
    r_q: float = 2.5
    coverage_threshold: float = 0.95
    max_rounds: int = 5
    k_normals: int = 10
    r_near_voxels: float = 2.0
    surface_cluster_extent: float = 12.0
    # assignment
    lambda_h: float = 0.6
    d_thr: float = 6.0
    epsilon: float = 1e-4
    R: float = 50.0
    alpha: float = 0.1
    K_GA: int = 700
    ga_population: int = 32
    # photographers / explorer
    K_local: int = 2
    M_kc: int = 3
    r_s: float = 0.8
    eps_pos: float = 0.3
    eps_ang: float = 0.15
    frontier_max_extent: float = 4.0
    frontier_attempts: int = 2
    dormant_cycles: int = 10
    explorer_limits: dict = field(default_factory=lambda: _limits(2.0, 2.0, 2.0, 2.0))
    photographer_limits: dict = field(default_factory=lambda: _limits(1.0, 1.0, 1.0, 1.0))
    lidar: dict = field(default_factory=lambda: {
        "max_range": 30.0, "azimuth_count": 180,
        "elevation_angles": [float(e) for e in range(-90, 91, 5)], "rate": 10.0})
    camera: dict = field(default_factory=lambda: {"fov_h": 80.0, "fov_v": 60.0, "max_view_dist": 12.5})

    # derived --------------------------------------------------------------
    @property
    def plan_every(self) -> int:
        return max(1, int(round(self.plan_period / self.dt)))

    def resolved_starts(self) -> tuple[np.ndarray, list[np.ndarray]]:
        ex = np.asarray(self.explorer_start, dtype=float)
        if self.photographer_starts:
            return ex, [np.asarray(p, dtype=float) for p in self.photographer_starts]
        ring = [(1.5, 0, 0), (0, 1.5, 0), (-1.5, 0, 0), (0, -1.5, 0),
                (1.5, 1.5, 0), (-1.5, 1.5, 0), (-1.5, -1.5, 0), (1.5, -1.5, 0)]
        return ex, [ex + np.array(ring[i % len(ring)]) * (1 + i // len(ring)) for i in range(self.n_photographers)]

    def to_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f.name for f in dataclasses.fields(Scenario)}
_DICT_KEYS = {
    "explorer_limits": {"v_max", "a_max", "j_max", "yaw_rate_max"},
    "photographer_limits": {"v_max", "a_max", "j_max", "yaw_rate_max"},
    "lidar": {"max_range", "azimuth_count", "elevation_angles", "rate"},
    "camera": {"fov_h", "fov_v", "max_view_dist"},
}


def _num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def validate(sc: Scenario) -> list[str]:
    """Every violation, not only the first."""
    errs = []
    if not (sc.scene.startswith("builtin:") and sc.scene[8:] in scenes.BUILTIN) and not os.path.isfile(sc.scene):
        errs.append(f"scene file not found: {sc.scene}")
    if not _num(sc.resolution) or not sc.resolution > 0:
        errs.append("resolution must be > 0")
    if not isinstance(sc.n_photographers, int) or sc.n_photographers < 1:
        errs.append("n_photographers must be >= 1")
    for name in ("dt", "plan_period", "D", "r_q", "d_thr", "r_s", "eps_pos", "eps_ang", "frontier_max_extent"):
        if not _num(getattr(sc, name)) or not getattr(sc, name) > 0:
            errs.append(f"{name} must be > 0")
    for name in ("max_ticks", "max_rounds", "k_normals", "K_GA", "ga_population", "K_local", "M_kc",
                 "frontier_attempts", "dormant_cycles"):
        v = getattr(sc, name)
        if not isinstance(v, int) or v < 1:
            errs.append(f"{name} must be a positive integer")
    if not (_num(sc.coverage_threshold) and 0 < sc.coverage_threshold <= 1):
        errs.append("coverage_threshold must lie in (0, 1]")
    for name in ("lambda_h", "epsilon", "R", "alpha", "r_near_voxels"):
        if not _num(getattr(sc, name)) or getattr(sc, name) < 0:
            errs.append(f"{name} must be >= 0")
    for name, keys in _DICT_KEYS.items():
        d = getattr(sc, name)
        missing = keys - set(d)
        extra = set(d) - keys
        if missing:
            errs.append(f"{name} missing {sorted(missing)}")
        if extra:
            errs.append(f"{name} has unknown keys {sorted(extra)}")
    for name in ("explorer_limits", "photographer_limits"):
        for k, v in getattr(sc, name).items():
            if not _num(v) or not v > 0:
                errs.append(f"{name}.{k} must be > 0")
    if not errs:
        from .sensors import CameraModel, LidarParams
        try:
            LidarParams(**{**sc.lidar, "elevation_angles": tuple(sc.lidar["elevation_angles"])})
        except (ValueError, TypeError) as e:
            errs.append(str(e))
        try:
            CameraModel(**sc.camera)
        except (ValueError, TypeError) as e:
            errs.append(str(e))
    if sc.bounds is not None:
        b = np.asarray(sc.bounds, dtype=float)
        if b.shape != (2, 3) or np.any(b[1] <= b[0]):
            errs.append("bounds must be [[xmin,ymin,zmin],[xmax,ymax,zmax]] with max > min")
    if sc.explorer_start is None or len(sc.explorer_start) != 3:
        errs.append("explorer_start must be a 3D point")
    if sc.photographer_starts is not None and len(sc.photographer_starts) != sc.n_photographers:
        errs.append("photographer_starts must list one point per photographer")
    return errs


def load_scene_points(sc: Scenario) -> tuple[np.ndarray, list[list[float]] | None]:
    if sc.scene.startswith("builtin:"):
        pts, bounds = scenes.BUILTIN[sc.scene[8:]](sc.resolution)
        return pts, [list(map(float, bounds[0])), list(map(float, bounds[1]))]
    if sc.scene.endswith(".json"):
        with open(sc.scene) as fh:
            data = json.load(fh)
        if isinstance(data, dict):
            data = data.get("voxels", data.get("points", []))
        return np.asarray(data, dtype=float).reshape(-1, 3), None
    return load_points_csv(sc.scene), None


def build_truth(sc: Scenario, seed: int = 0) -> VoxelGrid:
    pts, default_bounds = load_scene_points(sc)
    bounds = sc.bounds if sc.bounds is not None else default_bounds
    if bounds is None:
        if len(pts) == 0:
            raise SceneError("bounds are required for an empty scene file")
        lo, hi = pts.min(axis=0) - 5.0, pts.max(axis=0) + 5.0
        bounds = [lo.tolist(), hi.tolist()]
    return voxelize_scene(pts, sc.resolution, bounds, seed=seed)


def check_starts(sc: Scenario, truth: VoxelGrid) -> list[str]:
    errs = []
    ex, ph = sc.resolved_starts()
    for name, p in [("explorer_start", ex)] + [(f"photographer_starts[{i}]", q) for i, q in enumerate(ph)]:
        idx = truth.index_of(p)
        if not truth.in_bounds(idx):
            errs.append(f"{name} {p.tolist()} lies outside the grid")
        elif truth.state[idx] != FREE:
            errs.append(f"{name} {p.tolist()} is inside an obstacle")
    return errs


def from_dict(data: dict, base_dir: str = ".") -> Scenario:
    errs = []
    unknown = set(data) - _FIELDS
    if unknown:
        errs.append(f"unknown fields {sorted(unknown)}")
    for req in ("scene", "n_photographers"):
        if req not in data:
            errs.append(f"missing required field {req!r}")
    if errs:
        raise ScenarioError(errs)
    data = dict(data)
    scene = str(data["scene"])
    if not scene.startswith("builtin:"):
        scene = os.path.abspath(os.path.join(base_dir, scene))
    data["scene"] = scene
    defaults = Scenario(scene="", n_photographers=1)
    for name in _DICT_KEYS:
        if name in data and isinstance(data[name], dict):
            data[name] = {**getattr(defaults, name), **data[name]}
    if data.get("explorer_start") is None and scene.startswith("builtin:"):
        data["explorer_start"] = BUILTIN_STARTS.get(scene[8:])
    sc = Scenario(**data)
    errs = validate(sc)
    if errs:
        raise ScenarioError(errs)
    return sc


def load_scenario(path) -> Scenario:
    if not os.path.isfile(path):
        raise ScenarioError([f"scenario file not found: {path}"])
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as e:
        raise ScenarioError([f"{path}: invalid JSON ({e})"])
    if not isinstance(data, dict):
        raise ScenarioError([f"{path}: top level must be an object"])
    return from_dict(data, os.path.dirname(os.path.abspath(path)))


def save_scenario(sc: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(sc.to_dict(), fh, indent=2)
        fh.write("\n")
