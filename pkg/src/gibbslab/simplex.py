"""Dense probability-simplex grids with local refinement.

Used as the independent optimization oracle on finite atom spaces: a global
composition grid locates the basin and a shrinking local pattern search
polishes the incumbent.  Only objective evaluations are used, so results are
independent of any closed-form solution being checked.
"""

import numpy as np

__all__ = ["simplex_grid", "simplex_minimize"]

_GRID_CACHE = {}


def _compositions(total, parts):
    if parts == 1:
        return np.array([[total]], dtype=np.int64)
    blocks = []
    for first in range(total + 1):
        rest = _compositions(total - first, parts - 1)
        blocks.append(np.column_stack([np.full(len(rest), first, dtype=np.int64), rest]))
    return np.vstack(blocks)


def simplex_grid(m, steps):
    """All probability vectors on m atoms with coordinates multiples of 1/steps."""
    key = (m, steps)
    if key not in _GRID_CACHE:
        if len(_GRID_CACHE) > 8:
            _GRID_CACHE.clear()
        _GRID_CACHE[key] = _compositions(steps, m).astype(float) / steps
    return _GRID_CACHE[key]


def _local_offsets(m, radius):
    axes = [np.arange(-radius, radius + 1)] * (m - 1)
    mesh = np.meshgrid(*axes, indexing="ij")
    head = np.column_stack([a.ravel() for a in mesh])
    tail = -head.sum(axis=1, keepdims=True)
    offsets = np.column_stack([head, tail])
    return offsets[np.abs(tail[:, 0]) <= radius]


def simplex_minimize(objective, m, steps=200, refine_rounds=4, shrink=5, radius=3):
    """Minimize a vectorized objective over the m-simplex.

    ``objective`` maps an (r, m) array of probability vectors to r values
    (+inf allowed).  Returns ``(value, argmin)``.
    """
    grid = simplex_grid(m, steps)
    values = np.asarray(objective(grid), dtype=float)
    best = int(np.argmin(values))
    best_tau = grid[best].copy()
    best_val = float(values[best])
    h = 1.0 / steps
    offsets = _local_offsets(m, radius)
    for _ in range(refine_rounds):
        h /= shrink
        cand = best_tau[None, :] + h * offsets
        ok = (cand >= 0.0).all(axis=1)
        cand = cand[ok]
        if cand.size == 0:
            continue
        cand /= cand.sum(axis=1, keepdims=True)
        vals = np.asarray(objective(cand), dtype=float)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val = float(vals[i])
            best_tau = cand[i].copy()
    return best_val, best_tau
