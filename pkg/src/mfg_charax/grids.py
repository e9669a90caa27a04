"""Grids and grid-sampled functions.

A :class:`SpaceGrid` is either a box (tensor product of closed intervals,
endpoints included) or a torus (per-axis periodic, the duplicate endpoint is
excluded).  A :class:`GridFunction` holds vector-valued samples on a space
grid, optionally stacked along a uniform :class:`TimeGrid`, together with an
interpolation rule.  All types are immutable after construction and all
operations are pure, so they can be evaluated concurrently.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainViolationError, GridError

# Relative slack (in cells) tolerated before a box-domain lookup is an error.
_BOX_TOL_CELLS = 1e-8


def _as_float_array(a, name):
    arr = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise GridError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform tensor-product grid on a box or a torus.

    Parameters
    ----------
    kind : {"box", "torus"}
    dim : number of spatial axes.
    bounds : per-axis ``[lo, hi]`` pairs for a box, per-axis period lengths
        for a torus.
    n_points : per-axis node count (>= 2).  Torus grids place nodes at
        ``i * L / n`` for ``i < n``; box grids include both endpoints.
    """

    kind: str
    dim: int
    bounds: np.ndarray
    n_points: tuple

    def __init__(self, kind, dim, bounds, n_points):
        if kind not in ("box", "torus"):
            raise GridError(f"unknown grid kind {kind!r}")
        if dim < 1:
            raise GridError("dim must be >= 1")
        n_points = tuple(int(n) for n in np.atleast_1d(n_points))
        if len(n_points) == 1 and dim > 1:
            n_points = n_points * dim
        if len(n_points) != dim:
            raise GridError("n_points must give one count per axis")
        if any(n < 2 for n in n_points):
            raise GridError("need at least 2 points per axis")
        bounds = _as_float_array(bounds, "bounds")
        if kind == "box":
            bounds = bounds.reshape(dim, 2)
            if np.any(bounds[:, 0] >= bounds[:, 1]):
                raise GridError("box bounds need lo < hi on every axis")
        else:
            bounds = np.broadcast_to(np.atleast_1d(bounds), (dim,)).copy()
            if np.any(bounds <= 0):
                raise GridError("torus periods must be positive")
        bounds.setflags(write=False)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "n_points", n_points)

    def __eq__(self, other):
        if not isinstance(other, SpaceGrid):
            return NotImplemented
        return (self.kind == other.kind and self.dim == other.dim
                and self.n_points == other.n_points
                and np.array_equal(self.bounds, other.bounds))

    def __hash__(self):
        return hash((self.kind, self.dim, self.n_points, self.bounds.tobytes()))

    # -- geometry -----------------------------------------------------------

    @property
    def is_torus(self):
        return self.kind == "torus"

    @property
    def lo(self):
        if self.is_torus:
            return np.zeros(self.dim)
        return self.bounds[:, 0]

    @property
    def spacing(self):
        """Per-axis node spacing."""
        n = np.array(self.n_points, dtype=float)
        if self.is_torus:
            return self.bounds / n
        return (self.bounds[:, 1] - self.bounds[:, 0]) / (n - 1.0)

    @property
    def n_nodes(self):
        return int(np.prod(self.n_points))

    def axis(self, a):
        """Node coordinates along axis ``a``."""
        n = self.n_points[a]
        if self.is_torus:
            return np.arange(n) * (self.bounds[a] / n)
        return np.linspace(self.bounds[a, 0], self.bounds[a, 1], n)

    def nodes(self):
        """All node coordinates, shape ``(n_nodes, dim)``, C order."""
        mesh = np.meshgrid(*(self.axis(a) for a in range(self.dim)), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def wrap(self, X):
        """Map points into the fundamental domain (torus only)."""
        if not self.is_torus:
            return X
        return np.mod(X, self.bounds)

    def contains(self, X, slack=0.0):
        """Boolean mask of points inside the domain (torus: always True)."""
        X = np.atleast_2d(X)
        if self.is_torus:
            return np.ones(X.shape[0], dtype=bool)
        lo = self.bounds[:, 0] - slack
        hi = self.bounds[:, 1] + slack
        return np.all((X >= lo) & (X <= hi), axis=1)

    # -- interpolation ------------------------------------------------------

    def _axis_index_weights(self, X, out_of_bounds):
        """Per-axis lower index and fractional weight for multilinear lookup."""
        idx = []
        wgt = []
        dx = self.spacing
        for a in range(self.dim):
            n = self.n_points[a]
            if self.is_torus:
                u = np.mod(X[:, a], self.bounds[a]) / dx[a]
                i0 = np.minimum(u.astype(np.int64), n - 1)
                w = u - i0
            else:
                u = (X[:, a] - self.bounds[a, 0]) / dx[a]
                if out_of_bounds == "raise":
                    tol = _BOX_TOL_CELLS * n
                    bad = (u < -tol) | (u > n - 1 + tol)
                    if np.any(bad):
                        j = int(np.argmax(bad))
                        raise DomainViolationError(
                            f"point outside box domain on axis {a}", x=X[j].copy()
                        )
                    u = np.clip(u, 0.0, n - 1.0)
                elif out_of_bounds == "clamp":
                    u = np.clip(u, 0.0, n - 1.0)
                # "extrapolate": leave u as is; the edge cell extends linearly
                i0 = np.clip(np.floor(u).astype(np.int64), 0, n - 2)
                w = u - i0
            idx.append(i0)
            wgt.append(w)
        return idx, wgt

    def interp(self, values, X, method="linear", out_of_bounds="raise"):
        """Interpolate node ``values`` at points ``X``.

        Parameters
        ----------
        values : array, shape ``(n_nodes, c)``.
        X : array, shape ``(m, dim)`` (a single point is promoted).
        method : "linear" or "cubic".
        out_of_bounds : "raise", "clamp" or "extrapolate" (box grids only;
            torus lookups always wrap).
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise GridError(f"points have dim {X.shape[1]}, grid has {self.dim}")
        values = np.asarray(values, dtype=float)
        c = values.shape[-1]
        if method == "cubic":
            return self._interp_cubic(values, X, out_of_bounds)
        idx, wgt = self._axis_index_weights(X, out_of_bounds)
        ns = self.n_points
        strides = np.ones(self.dim, dtype=np.int64)
        for a in range(self.dim - 2, -1, -1):
            strides[a] = strides[a + 1] * ns[a + 1]
        out = np.zeros((X.shape[0], c))
        flat = values.reshape(-1, c)
        for corner in range(1 << self.dim):
            flat_idx = np.zeros(X.shape[0], dtype=np.int64)
            w = np.ones(X.shape[0])
            for a in range(self.dim):
                hi_side = (corner >> a) & 1
                ia = idx[a]
                if hi_side:
                    ia = ia + 1
                    if self.is_torus:
                        ia = np.where(ia == ns[a], 0, ia)
                    w = w * wgt[a]
                else:
                    w = w * (1.0 - wgt[a])
                flat_idx += ia * strides[a]
            out += w[:, None] * flat[flat_idx]
        return out

    def _interp_cubic(self, values, X, out_of_bounds):
        from scipy import ndimage

        shaped = values.reshape(*self.n_points, -1)
        c = shaped.shape[-1]
        dx = self.spacing
        coords = np.empty((self.dim, X.shape[0]))
        for a in range(self.dim):
            if self.is_torus:
                coords[a] = np.mod(X[:, a], self.bounds[a]) / dx[a]
            else:
                u = (X[:, a] - self.bounds[a, 0]) / dx[a]
                if out_of_bounds == "raise":
                    tol = _BOX_TOL_CELLS * self.n_points[a]
                    bad = (u < -tol) | (u > self.n_points[a] - 1 + tol)
                    if np.any(bad):
                        j = int(np.argmax(bad))
                        raise DomainViolationError(
                            f"point outside box domain on axis {a}", x=X[j].copy()
                        )
                coords[a] = np.clip(u, 0.0, self.n_points[a] - 1.0)
        mode = "grid-wrap" if self.is_torus else "nearest"
        out = np.empty((X.shape[0], c))
        for k in range(c):
            out[:, k] = ndimage.map_coordinates(shaped[..., k], coords, order=3, mode=mode)
        return out


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid ``0 = t_0 < ... < t_n = t_max``."""

    t_max: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise GridError("n_steps must be positive")
        if not np.isfinite(self.t_max) or self.t_max <= 0:
            raise GridError("t_max must be positive and finite")

    @property
    def dt(self):
        return self.t_max / self.n_steps

    @property
    def times(self):
        return np.linspace(0.0, self.t_max, self.n_steps + 1)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Vector-valued samples on a space grid, optionally time-stacked.

    ``values`` has shape ``(n_steps + 1, n_nodes, c)`` when a time grid is
    present and ``(n_nodes, c)`` otherwise.  Instances compare by identity;
    compare ``.values`` explicitly when sample equality is meant.
    """

    grid: SpaceGrid
    values: np.ndarray
    time: TimeGrid | None = None
    interp: str = "linear"
    diverged: bool = field(default=False, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        expected = (self.grid.n_nodes,) if self.time is None else (
            self.time.n_steps + 1,
            self.grid.n_nodes,
        )
        if values.ndim == len(expected):
            values = values[..., None]
        if values.shape[:-1] != expected:
            raise GridError(
                f"values shape {values.shape} inconsistent with grids {expected}"
            )
        if self.interp not in ("linear", "cubic"):
            raise GridError(f"unknown interpolation {self.interp!r}")
        if not self.diverged and not np.all(np.isfinite(values)):
            raise GridError("values contain NaN/Inf (pass diverged=True to keep them)")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_callback(cls, grid, fn, time=None, interp="linear"):
        """Sample a vectorized callback ``fn(X) -> (m, c)`` at the grid nodes.

        With a time grid, every slice holds the same sample (constant-in-time
        extension).
        """
        vals = np.atleast_2d(np.asarray(fn(grid.nodes()), dtype=float))
        if vals.shape[0] != grid.n_nodes:
            vals = vals.T
        if time is not None:
            vals = np.broadcast_to(vals, (time.n_steps + 1, *vals.shape)).copy()
        return cls(grid, vals, time=time, interp=interp)

    @property
    def n_components(self):
        return self.values.shape[-1]

    # -- evaluation ---------------------------------------------------------

    def slice_values(self, k):
        """Samples of the k-th time slice, shape ``(n_nodes, c)``."""
        if self.time is None:
            return self.values
        return self.values[k]

    def slice_at(self, t):
        """Time-interpolated samples at time ``t`` (linear between slices).

        ``t`` is clamped to the endpoints within ``dt / 2``; further out is a
        domain violation.
        """
        if self.time is None:
            return self.values
        dt = self.time.dt
        if t < -0.5 * dt - 1e-300 or t > self.time.t_max + 0.5 * dt:
            raise DomainViolationError(f"time {t} outside [0, {self.time.t_max}]", t=t)
        t = min(max(t, 0.0), self.time.t_max)
        u = t / dt
        k = min(int(u), self.time.n_steps - 1)
        w = u - k
        if w == 0.0:
            return self.values[k]
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def eval(self, t, X, out_of_bounds="raise"):
        """Interpolate at time ``t`` and points ``X`` (shape ``(m, dim)``)."""
        vals = self.slice_at(t)
        return self.grid.interp(vals, X, method=self.interp, out_of_bounds=out_of_bounds)

    # -- export -------------------------------------------------------------

    def to_csv(self, path_or_buf):
        """Write one row per node: ``t, x..., value...`` (floats via repr)."""
        close = False
        if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
            buf = open(path_or_buf, "w", newline="")
            close = True
        else:
            buf = path_or_buf
        try:
            d, c = self.grid.dim, self.n_components
            cols = [f"x{a}" for a in range(d)] + [f"v{k}" for k in range(c)]
            nodes = self.grid.nodes()
            if self.time is not None:
                buf.write(",".join(["t"] + cols) + "\n")
                for k, t in enumerate(self.time.times):
                    for j in range(self.grid.n_nodes):
                        row = [t, *nodes[j], *self.values[k, j]]
                        buf.write(",".join(repr(float(v)) for v in row) + "\n")
            else:
                buf.write(",".join(cols) + "\n")
                for j in range(self.grid.n_nodes):
                    row = [*nodes[j], *self.values[j]]
                    buf.write(",".join(repr(float(v)) for v in row) + "\n")
        finally:
            if close:
                buf.close()

    def to_csv_string(self):
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


def as_space_callback(u0, grid):
    """Normalize an initial condition to a vectorized callback ``X -> (m, c)``.

    Accepts a callable (returned as is, wrapped to atleast-2d) or a
    time-less :class:`GridFunction` (interpolated on its own grid; box
    lookups clamp at the boundary so solver probe points just outside the
    domain stay evaluable).
    """
    if isinstance(u0, GridFunction):
        if u0.time is not None:
            raise GridError("initial condition GridFunction must be time-less")
        oob = "raise" if u0.grid.is_torus else "clamp"

        def _eval(X):
            return u0.grid.interp(u0.values, X, method=u0.interp, out_of_bounds=oob)

        return _eval
    if callable(u0):

        def _call(X):
            out = np.asarray(u0(np.atleast_2d(X)), dtype=float)
            if out.ndim == 1:
                out = out[:, None]
            return out

        return _call
    raise GridError("initial condition must be a callback or a GridFunction")


def interpolate(f, t, x):
    """Value of ``f`` at time ``t`` and point ``x`` (exact at grid nodes).

    ``t`` may be None for time-less functions.  Torus coordinates wrap; box
    coordinates beyond tolerance raise :class:`DomainViolationError`.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if f.time is None:
        vals = f.values
    else:
        if t is None:
            raise GridError("f has a time grid; a time is required")
        vals = f.slice_at(t)
    out = f.grid.interp(vals, x[None, :], method=f.interp)
    return out[0]
