"""Small builders shared by the test modules."""
import numpy as np

from soar.world import FREE, OCCUPIED, VoxelGrid


def grid_from_states(state, resolution=1.0, origin=(0.0, 0.0, 0.0)):
    state = np.asarray(state, dtype=np.uint8)
    g = VoxelGrid.empty(origin, resolution, state.shape)
    g.state[...] = state
    return g


def free_with(blocks, dims=(10, 10, 10), resolution=1.0):
    """All-Free grid with Occupied index boxes ``((i0, i1), (j0, j1), (k0, k1))`` (end exclusive)."""
    g = VoxelGrid.empty((0, 0, 0), resolution, dims, fill=FREE)
    for (i0, i1), (j0, j1), (k0, k1) in blocks:
        g.state[i0:i1, j0:j1, k0:k1] = OCCUPIED
    return g
