"""Probability densities on the 1-d torus grid and exact W1 geometry.

The state dimension is fixed at one so that the Monge-Kantorovich distance
has the exact circular-CDF form; cells are uniform, with node coordinates
acting as cell centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import GridError
from ..grids import GridFunction, SpaceGrid

_MASS_TOL = 1e-8


def torus_grid(n_cells, period=1.0):
    return SpaceGrid("torus", 1, [period], [n_cells])


@dataclass(frozen=True, eq=False)
class MeasureState:
    """Nonnegative density with unit mass on a uniform 1-d torus grid."""

    grid: SpaceGrid
    density: np.ndarray

    def __post_init__(self):
        if not self.grid.is_torus or self.grid.dim != 1:
            raise GridError("MeasureState lives on a 1-d torus grid")
        rho = np.asarray(self.density, dtype=float)
        if rho.shape != (self.grid.n_nodes,):
            raise GridError("density shape does not match the grid")
        if not np.all(np.isfinite(rho)):
            raise GridError("density must be finite")
        if np.any(rho < -1e-13):
            raise GridError("density must be nonnegative")
        rho = np.maximum(rho, 0.0)
        mass = rho.sum() * self.dx
        if abs(mass - 1.0) > _MASS_TOL:
            raise GridError(f"density mass {mass} is not 1")
        rho = rho / mass
        rho.setflags(write=False)
        object.__setattr__(self, "density", rho)

    @classmethod
    def from_values(cls, grid, values):
        """Clip tiny negatives and renormalize (solver-step constructor)."""
        rho = np.maximum(np.asarray(values, dtype=float), 0.0)
        total = rho.sum() * grid.bounds[0] / grid.n_nodes
        if total <= 0 or not np.isfinite(total):
            raise GridError("density lost its mass")
        return cls(grid, rho / total)

    @classmethod
    def uniform(cls, grid):
        return cls(grid, np.full(grid.n_nodes, 1.0 / grid.bounds[0]))

    @property
    def dx(self):
        return float(self.grid.bounds[0]) / self.grid.n_nodes

    @property
    def cells(self):
        return self.grid.axis(0)

    def mean(self):
        """First moment (coordinate mean over the fundamental domain)."""
        return float(np.sum(self.cells * self.density) * self.dx)


def d1_distance(m1: MeasureState, m2: MeasureState):
    """Exact 1-Wasserstein distance on the circle.

    With Delta the cumulative of (m1 - m2), the distance is
    ``min_c sum |Delta - c| dx``, and the optimal shift c is the (weighted)
    median of Delta; uniform cells make it the plain median.
    """
    if m1.grid != m2.grid:
        raise GridError("measures live on different grids")
    dx = m1.dx
    delta = np.cumsum(m1.density - m2.density) * dx
    c = np.median(delta)
    return float(np.sum(np.abs(delta - c)) * dx)


def pushforward(psi, phi, m: MeasureState):
    """Image measure of ``m`` under ``x -> psi(phi(x))``.

    ``phi`` is a time-less :class:`GridFunction`, an array of per-cell
    values, or a callable; ``psi`` maps reals to reals (wrapped onto the
    torus).  Each cell's mass is deposited at the image of its center with
    linear (area-weighted) splatting, so total mass is preserved exactly.
    """
    grid = m.grid
    x = m.cells
    if isinstance(phi, GridFunction):
        vals = phi.grid.interp(phi.values, x[:, None], method=phi.interp)[:, 0]
    elif callable(phi):
        vals = np.asarray(phi(x), dtype=float).reshape(-1)
    else:
        vals = np.asarray(phi, dtype=float).reshape(-1)
    if vals.shape != x.shape:
        raise GridError("phi values do not match the cell count")
    y = np.asarray(psi(vals), dtype=float).reshape(-1)

    period = float(grid.bounds[0])
    n = grid.n_nodes
    dx = m.dx
    pos = np.mod(y, period) / dx
    i0 = np.minimum(pos.astype(np.int64), n - 1)
    w = pos - i0
    mass = m.density * dx
    out = np.zeros(n)
    np.add.at(out, i0, mass * (1.0 - w))
    np.add.at(out, (i0 + 1) % n, mass * w)
    return MeasureState.from_values(grid, out / dx)


def translate_density(m: MeasureState, shift):
    """Translate the measure by ``shift`` (mass moves to the right).

    Non-grid shifts use conservative linear splatting, so the result is a
    density again; the smoothing this introduces is below one cell.
    """
    grid = m.grid
    n = grid.n_nodes
    s = np.mod(shift / m.dx, n)
    k = int(np.floor(s))
    w = s - k
    rho = m.density
    out = (1.0 - w) * np.roll(rho, k) + w * np.roll(rho, k + 1)
    return MeasureState.from_values(grid, out)


def wrapped_gaussian_state(grid, center, width, n_images=8):
    """Wrapped Gaussian anchor measure."""
    period = float(grid.bounds[0])
    x = grid.axis(0)
    rho = np.zeros_like(x)
    for j in range(-n_images, n_images + 1):
        rho += np.exp(-0.5 * ((x - center + j * period) / width) ** 2)
    return MeasureState.from_values(grid, rho)


def default_anchors(grid, count, seed=0):
    """Anchor set for the measure axis: uniform, wrapped Gaussians of varied
    width and center, and two-bump mixtures."""
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    period = float(grid.bounds[0])
    anchors = [MeasureState.uniform(grid)]
    k = 0
    while len(anchors) < count:
        if k % 3 < 2:
            center = period * ((0.17 + 0.31 * k + 0.05 * rng.random()) % 1.0)
            width = period * (0.04 + 0.05 * (k % 4))
            anchors.append(wrapped_gaussian_state(grid, center, width))
        else:
            c1 = period * ((0.1 + 0.4 * rng.random()) % 1.0)
            c2 = (c1 + period * (0.3 + 0.2 * rng.random())) % period
            a = wrapped_gaussian_state(grid, c1, 0.06 * period)
            b = wrapped_gaussian_state(grid, c2, 0.09 * period)
            anchors.append(MeasureState.from_values(
                grid, 0.5 * a.density + 0.5 * b.density))
        k += 1
    return anchors[:count]
