"""Built-in synthetic scenes, emitted as occupied-voxel center clouds."""
from __future__ import annotations

import numpy as np


def solid_box(lo, hi, resolution: float) -> np.ndarray:
    """Centers of every voxel cell inside ``[lo, hi]`` (a filled block)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    axes = [np.arange(a + resolution / 2, b, resolution) for a, b in zip(lo, hi)]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([x.ravel() for x in g], axis=1)


def box_scene(resolution: float = 0.5):
    """A 6 x 6 x 4 m block in a 20 x 20 x 10 m volume."""
    bounds = ([0.0, 0.0, 0.0], [20.0, 20.0, 10.0])
    pts = solid_box([7, 7, 0], [13, 13, 4], resolution)
    return pts, bounds


def building_scene(resolution: float = 0.5):
    """12 x 12 x 5 m main block with a 4 x 4 x 9 m tower on one corner,
    centered in a 30 x 30 x 15 m volume."""
    bounds = ([0.0, 0.0, 0.0], [30.0, 30.0, 15.0])
    main = solid_box([9, 9, 0], [21, 21, 5], resolution)
    tower = solid_box([17, 17, 5], [21, 21, 9], resolution)
    return np.concatenate([main, tower]), bounds


def corridor_scene(resolution: float = 0.5):
    """An L-shaped corridor carved out of a 32 m cube (64^3 voxels at 0.5 m).

    Walls are one voxel thick; the corridor is 6 m wide and 6 m tall.
    """
    n = int(round(32.0 / resolution))
    occ = np.zeros((n, n, n), dtype=bool)
    inner = np.zeros_like(occ)
    w = int(round(6.0 / resolution))
    z0, z1 = 2, 2 + w
    a0, a1 = 4, 4 + w
    inner[a0:n - 4, a0:a1, z0:z1] = True          # leg along x
    inner[n - 4 - w:n - 4, a0:n - 4, z0:z1] = True  # leg along y
    grown = inner.copy()
    for ax in range(3):
        for s in (1, -1):
            grown |= np.roll(inner, s, axis=ax)
    occ = grown & ~inner
    pts = (np.argwhere(occ) + 0.5) * resolution
    bounds = ([0.0, 0.0, 0.0], [n * resolution] * 3)
    return pts, bounds


BUILTIN = {"box": box_scene, "building": building_scene, "corridor": corridor_scene}
