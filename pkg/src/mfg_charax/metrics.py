"""Discrete norms: sup norm, grid Lipschitz constants, linear-growth norm.

Lipschitz constants are measured by finite differences over grid edges
(torus grids include the wrap-around edge).  The estimate is a lower bound
on the true constant of the sampled function and converges under grid
refinement.  All norms are sup norms over grid nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridError
from .grids import GridFunction


@dataclass(frozen=True)
class LipEstimate:
    """Regularity snapshot of one solution slice.

    ``lip_m`` is present only for measure problems, ``growth_norm`` only for
    linear-growth (Hilbert) problems.
    """

    lip_x: float
    sup_norm: float
    lip_m: float | None = None
    growth_norm: float | None = None

    def __post_init__(self):
        for name in ("lip_x", "sup_norm", "lip_m", "growth_norm"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")


def sup_norm(values):
    """Max absolute entry (0 for empty input)."""
    values = np.asarray(values)
    return float(np.max(np.abs(values))) if values.size else 0.0


def lipschitz_of_values(grid, values):
    """Max edge slope of node samples ``values`` (shape ``(n_nodes, c)``)."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    shaped = values.reshape(*grid.n_points, -1)
    dx = grid.spacing
    best = 0.0
    for a in range(grid.dim):
        d = np.diff(shaped, axis=a)
        if grid.is_torus:
            wrap = np.take(shaped, [0], axis=a) - np.take(shaped, [-1], axis=a)
            d = np.concatenate([d, wrap], axis=a)
        if d.size:
            best = max(best, float(np.max(np.abs(d))) / dx[a])
    return best


def lipschitz_x(f: GridFunction, t=None):
    """Spatial Lipschitz constant of ``f`` at time ``t`` (grid-edge slopes)."""
    vals = f.values if f.time is None else f.slice_at(t)
    return lipschitz_of_values(f.grid, vals)


def growth_norm_of_values(grid, values):
    """sup over node radii R of ``R^{-1} * sup_{|x| <= R} |f(x)|``.

    Evaluated over nested grid shells at each node radius; requires a box
    grid whose closure contains the origin.
    """
    if grid.is_torus:
        raise GridError("growth norm is defined on box grids")
    if np.any(grid.bounds[:, 0] > 0) or np.any(grid.bounds[:, 1] < 0):
        raise GridError("growth norm needs the origin inside the grid")
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    r = np.linalg.norm(grid.nodes(), axis=1)
    v = np.max(np.abs(values), axis=1)
    order = np.argsort(r, kind="stable")
    r_sorted = r[order]
    v_shell = np.maximum.accumulate(v[order])
    mask = r_sorted > 0
    if not np.any(mask):
        return 0.0
    return float(np.max(v_shell[mask] / r_sorted[mask]))


def growth_norm(f: GridFunction, t=None):
    """Linear-growth norm of ``f`` at time ``t`` (see growth_norm_of_values)."""
    vals = f.values if f.time is None else f.slice_at(t)
    return growth_norm_of_values(f.grid, vals)
