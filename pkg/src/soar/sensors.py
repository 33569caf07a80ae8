"""Simulated panoramic LiDAR and gimbal-camera visibility."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .world import VoxelGrid, raycast_codes

ANGLE_EPS = 1e-9


@dataclass(frozen=True)
class LidarParams:
    max_range: float = 30.0
    azimuth_count: int = 180
    elevation_angles: tuple[float, ...] = tuple(float(e) for e in range(-60, 61, 5))
    rate: float = 10.0

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self) -> list[str]:
        errors = []
        if not self.max_range > 0:
            errors.append("lidar.max_range must be > 0")
        if self.azimuth_count < 4:
            errors.append("lidar.azimuth_count must be >= 4")
        el = list(self.elevation_angles)
        if not el:
            errors.append("lidar.elevation_angles must not be empty")
        if any(b <= a for a, b in zip(el, el[1:])):
            errors.append("lidar.elevation_angles must be strictly increasing")
        if any(abs(e) > 90 for e in el):
            errors.append("lidar.elevation_angles must lie in [-90, 90]")
        return errors

    def directions(self, yaw: float = 0.0) -> np.ndarray:
        az = yaw + 2.0 * math.pi * np.arange(self.azimuth_count) / self.azimuth_count
        el = np.radians(np.asarray(self.elevation_angles, dtype=float))
        A, E = np.meshgrid(az, el, indexing="ij")
        return np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)


@dataclass(frozen=True)
class CameraModel:
    fov_h: float = 80.0
    fov_v: float = 60.0
    max_view_dist: float = 12.5

    def __post_init__(self):
        if not (0 < self.fov_h < 180 and 0 < self.fov_v < 180):
            raise ValueError("camera FoV angles must lie in (0, 180) degrees")
        if not self.max_view_dist > 0:
            raise ValueError("camera.max_view_dist must be > 0")


def lidar_scan(truth: VoxelGrid, position, yaw: float, params: LidarParams):
    """One instantaneous panoramic sweep against the ground truth.

    Returns ``(hits, misses)`` as world-frame arrays; each hit lies inside the
    first Occupied voxel along its ray, each miss is the ray end at max range.
    """
    dirs = params.directions(yaw)
    g0 = truth.to_grid(position)
    pts, hit = K.lidar_cast(truth.state, g0, dirs, params.max_range / truth.resolution)
    world = truth.origin + pts * truth.resolution
    return world[hit], world[~hit]


def camera_frame(pitch: float, yaw: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gimbal camera axes as (forward, right, up).

    Positive pitch tilts the view down, so the forward axis of a viewpoint
    sampled along normal ``n`` is ``-n``.
    """
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    fwd = np.array([cp * cy, cp * sy, -sp])
    right = np.array([sy, -cy, 0.0])
    up = np.cross(right, fwd)
    return fwd, right, up


def in_frustum(pos, pitch: float, yaw: float, pts, cam: CameraModel) -> np.ndarray:
    """Range and pyramidal FoV test (closed boundary), no occlusion."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    v = pts - np.asarray(pos, dtype=float)
    fwd, right, up = camera_frame(pitch, yaw)
    f = v @ fwd
    dist = np.linalg.norm(v, axis=1)
    ang_h = np.arctan2(np.abs(v @ right), f)
    ang_v = np.arctan2(np.abs(v @ up), f)
    return (
        (dist <= cam.max_view_dist + 1e-12)
        & (f > 0)
        & (ang_h <= math.radians(cam.fov_h) / 2 + ANGLE_EPS)
        & (ang_v <= math.radians(cam.fov_v) / 2 + ANGLE_EPS)
    )


def visible_mask(grid: VoxelGrid, pos, pitch: float, yaw: float, pts, cam: CameraModel) -> np.ndarray:
    """camera_visible for many points from one pose."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    mask = in_frustum(pos, pitch, yaw, pts, cam)
    if mask.any():
        codes = raycast_codes(grid, np.asarray(pos, dtype=float), pts[mask])
        mask[mask] = codes == K.REACHED
    return mask


def camera_visible(grid: VoxelGrid, vp, pt, cam: CameraModel) -> bool:
    """True iff ``pt`` is in range, inside the FoV and the ray from the camera
    first meets Occupied space in ``pt``'s own voxel."""
    return bool(visible_mask(grid, vp.pos, vp.pitch, vp.yaw, np.asarray(pt)[None, :], cam)[0])


@dataclass
class Pose:
    """Plain pose for camera queries outside the coverage module."""

    pos: np.ndarray
    pitch: float = 0.0
    yaw: float = 0.0
