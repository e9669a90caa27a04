"""Certification of candidate solutions against a computed Lipschitz solution.

A candidate V that satisfies the PDE up to a residual eps and starts within
eps of the initial datum must stay within 2 max(eps, init gap) e^{C t} of
the Lipschitz solution; the constant C is not explicit in the underlying
estimate, so it is exposed as a parameter with a data-driven default
(Lipschitz constants of the coefficients and of the solution over the run)
and reported in the certificate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridError
from .grids import GridFunction
from .metrics import lipschitz_of_values, sup_norm


@dataclass(frozen=True)
class Certificate:
    """Strong-weak closeness certificate.

    ``passed`` holds exactly when the measured gap stays below
    ``2 max(epsilon, init_gap) e^{C t}`` at every checked time; ``bound``
    reports that envelope at the final time.
    """

    epsilon: float
    init_gap: float
    sup_gap: float
    bound: float
    C_used: float
    passed: bool
    gaps: tuple = field(default=(), compare=False)
    bounds: tuple = field(default=(), compare=False)
    times: tuple = field(default=(), compare=False)


def _space_gradients(grid, vals):
    """Central-difference gradients per axis; shape (dim, *n_points, c)."""
    shaped = vals.reshape(*grid.n_points, -1)
    dx = grid.spacing
    grads = []
    for a in range(grid.dim):
        if grid.is_torus:
            g = (np.roll(shaped, -1, axis=a) - np.roll(shaped, 1, axis=a)) / (2 * dx[a])
        else:
            g = np.gradient(shaped, dx[a], axis=a)
        grads.append(g)
    return grads, shaped


def _interior_mask(grid):
    if grid.is_torus:
        return np.ones(grid.n_points, dtype=bool)
    mask = np.ones(grid.n_points, dtype=bool)
    for a in range(grid.dim):
        idx = [slice(None)] * grid.dim
        idx[a] = 0
        mask[tuple(idx)] = False
        idx[a] = -1
        mask[tuple(idx)] = False
    return mask


def residual_finite(V: GridFunction, problem):
    """Sup-norm discrete residual of the finite-state master equation.

    Forward differences in time, central differences in space, evaluated at
    interior nodes; the jump term is included only when the problem carries
    lam > 0 with S and DS.
    """
    if V.time is None:
        raise GridError("residual needs a time-dependent candidate")
    grid = V.grid
    if any(n < 3 for n in grid.n_points):
        raise GridError("need at least 3 nodes per axis for central differences")
    dt = V.time.dt
    nodes = grid.nodes()
    mask = _interior_mask(grid).reshape(-1)
    worst = 0.0
    for k in range(V.time.n_steps):
        vals = V.values[k]
        dVdt = (V.values[k + 1] - vals) / dt
        grads, _ = _space_gradients(grid, vals)
        Fv = np.asarray(problem.F(nodes, vals), dtype=float)
        Gv = np.asarray(problem.G(nodes, vals), dtype=float)
        transport = np.zeros_like(vals)
        for a in range(grid.dim):
            transport += Fv[:, a:a + 1] * grads[a].reshape(vals.shape)
        res = dVdt + transport - Gv
        if problem.lam > 0 and problem.S is not None and problem.DS is not None:
            SX = np.asarray(problem.S(nodes), dtype=float)
            vS = grid.interp(vals, SX, method=V.interp,
                             out_of_bounds="clamp" if not grid.is_torus else "raise")
            DSm = np.asarray(problem.DS(nodes), dtype=float)
            res = res + problem.lam * (vals - np.einsum("mji,mj->mi", DSm, vS))
        worst = max(worst, float(np.max(np.abs(res[mask]))))
    return worst


def estimate_coupling_constant(problem, U: GridFunction, n_samples=200, seed=0):
    """Data-driven default for the certificate constant C.

    Estimates the p-Lipschitz constants of F and G over the solution's
    value range by divided differences at random node/value pairs, and
    combines them with the solution's own spatial Lipschitz constant:
    ``C = Lip_p(G) + Lip_p(F) (1 + lip_x(U))``.
    """
    rng = np.random.default_rng(seed)
    grid = U.grid
    nodes = grid.nodes()
    flat = U.values.reshape(-1, U.n_components)
    scale = max(1.0, sup_norm(flat))
    idx = rng.integers(0, nodes.shape[0], size=n_samples)
    X = nodes[idx]
    P1 = rng.uniform(-scale, scale, size=(n_samples, U.n_components))
    P2 = P1 + rng.normal(scale=0.1 * scale, size=P1.shape)
    dP = np.maximum(np.linalg.norm(P2 - P1, axis=1), 1e-12)

    def lip_p(fn):
        d = np.asarray(fn(X, P2), dtype=float) - np.asarray(fn(X, P1), dtype=float)
        return float(np.max(np.linalg.norm(d, axis=1) / dP))

    lip_u = max(lipschitz_of_values(grid, U.values[k]) for k in range(U.values.shape[0]))
    return lip_p(problem.G) + lip_p(problem.F) * (1.0 + lip_u)


def strong_weak_certificate(U: GridFunction, V: GridFunction, problem, C=None):
    """Check a candidate V against the Lipschitz solution U.

    Measures the PDE residual of V and its initial gap against the
    problem's datum, then verifies
    ``sup_x |U - V|(t) <= 2 max(eps, init_gap) e^{C t}`` at every time node.
    """
    if U.grid != V.grid or U.time != V.time:
        raise GridError("U and V must share their grids")
    eps = residual_finite(V, problem)
    u0_fn = problem.u0_eval()
    u0_nodes = np.atleast_2d(np.asarray(u0_fn(U.grid.nodes()), dtype=float))
    init_gap = float(np.max(np.abs(V.values[0] - u0_nodes)))
    if C is None:
        C = estimate_coupling_constant(problem, U)
    times = U.time.times
    gaps = np.max(np.abs(U.values - V.values), axis=(1, 2))
    lead = 2.0 * max(eps, init_gap)
    bounds = lead * np.exp(C * times)
    passed = bool(np.all(gaps <= bounds + 1e-15))
    return Certificate(
        epsilon=eps, init_gap=init_gap, sup_gap=float(np.max(gaps)),
        bound=float(bounds[-1]), C_used=float(C), passed=passed,
        gaps=tuple(float(g) for g in gaps),
        bounds=tuple(float(b) for b in bounds),
        times=tuple(float(t) for t in times),
    )


@dataclass(frozen=True)
class TimeLipschitzResult:
    measured: float
    bound: float
    passed: bool


def time_lipschitz_check(U: GridFunction, problem):
    """Check the time-Lipschitz bound of a converged solution.

    The measured constant ``max |U(t+dt) - U(t)| / dt`` must stay below
    ``sup|G| + lam (jump sup) + sup|F| lip_x``, evaluated on the solution's
    own range, with 10 percent slack.
    """
    if U.time is None:
        raise GridError("time regularity needs a time-dependent solution")
    dt = U.time.dt
    measured = float(np.max(np.abs(np.diff(U.values, axis=0)))) / dt
    grid = U.grid
    nodes = grid.nodes()
    sup_G = 0.0
    sup_F = 0.0
    jump_sup = 0.0
    lip = 0.0
    for k in range(U.values.shape[0]):
        vals = U.values[k]
        sup_G = max(sup_G, sup_norm(problem.G(nodes, vals)))
        sup_F = max(sup_F, sup_norm(problem.F(nodes, vals)))
        lip = max(lip, lipschitz_of_values(grid, vals))
        if problem.lam > 0 and problem.S is not None and problem.DS is not None:
            SX = np.asarray(problem.S(nodes), dtype=float)
            vS = grid.interp(vals, SX, method=U.interp,
                             out_of_bounds="clamp" if not grid.is_torus else "raise")
            DSm = np.asarray(problem.DS(nodes), dtype=float)
            jump_sup = max(jump_sup, sup_norm(vals - np.einsum("mji,mj->mi", DSm, vS)))
    bound = (sup_G + problem.lam * jump_sup + sup_F * lip) * 1.1
    return TimeLipschitzResult(measured=measured, bound=float(bound),
                               passed=measured <= bound)
