"""Backward-characteristic transport engine.

Computes, for every node (t_i, x_j) of a time-space grid, the quantity

    integral_0^{t_i} A(t_i - s, x(s)) ds + u0(x(t_i)),

where x(.) solves dx/ds = B(t_i - s, x(s)), x(0) = x_j.  Substituting
tau = t_i - s shows that the paths of *all* time levels follow the single
non-autonomous field x' = B(tau, x) with tau running downward.  The engine
therefore sweeps tau from t_max to 0 once, activating the nodes of level i
when tau reaches t_i; every active row advances with a classical 4th-order
step and the source integral accumulates by the trapezoid rule on the
substeps.  This is algebraically identical to integrating each node's full
path separately, at a fraction of the bookkeeping.

A replica axis turns the deterministic step into Euler-Maruyama: each
replica receives its own Gaussian kicks, supplied by a callback of the
global substep index so that common random numbers survive across
fixed-point iterations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class SweepResult:
    values: np.ndarray        # (n_steps + 1, n_nodes, R, c)
    feet: np.ndarray | None   # (n_steps + 1, n_nodes, d); deterministic runs only
    exited: np.ndarray        # (n_steps + 1, n_nodes) bool, any-replica box exits
    first_exit: tuple | None  # (t_level, x) of the first recorded exit


def sweep(grid, times, n_sub, A, B, u0, *, noise=None, n_replicas=1, exit_slack=None):
    """Run the downward tau sweep.

    Parameters
    ----------
    grid : SpaceGrid (torus positions wrap every substep).
    times : increasing array ``0 = t_0 < ... < t_n`` with uniform spacing.
    n_sub : substeps per time-grid interval (flow step and quadrature step).
    A : source callback ``(tau, X) -> (m, c)`` with ``X`` of shape (m, d),
        or None for a zero source.
    B : drift callback ``(tau, X) -> (m, d)`` or None for zero drift.
    u0 : terminal callback ``X -> (m, c)``.
    noise : optional ``substep_index -> (R, d)`` Gaussian increments with
        variance equal to the substep, shared by every active node row and
        already scaled by the per-coordinate volatility.  When present the
        path step is Euler-Maruyama (drift order drops to Euler).
    n_replicas : Monte Carlo replicas carried per node (R).
    exit_slack : absolute tolerance for box-exit detection; None disables
        the check (torus grids never exit).
    """
    n_steps = len(times) - 1
    dt = times[1] - times[0]
    h = dt / n_sub
    nodes = grid.nodes()
    n_nodes, d = nodes.shape
    R = int(n_replicas)

    probe = np.atleast_2d(np.asarray(u0(nodes[:1]), dtype=float))
    c = probe.shape[-1]

    cap = n_steps * n_nodes
    X = np.empty((cap, R, d))
    acc = np.zeros((cap, R, c))
    a_prev = np.zeros((cap, R, c)) if A is not None else None
    exited_rows = np.zeros(cap, dtype=bool)
    n_active = 0
    first_exit = None

    check_exit = exit_slack is not None and not grid.is_torus

    def _drift(tau, pts):
        out = np.asarray(B(tau, pts.reshape(-1, d)), dtype=float)
        return out.reshape(pts.shape)

    def _source(tau, pts):
        out = np.asarray(A(tau, pts.reshape(-1, d)), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        return out.reshape(pts.shape[0], pts.shape[1], c)

    def _terminal(pts):
        out = np.atleast_2d(np.asarray(u0(pts.reshape(-1, d)), dtype=float))
        return out.reshape(pts.shape[0], pts.shape[1], c)

    # Substep index counts down from n_steps * n_sub (tau = t_max) to 1;
    # the step with index j moves tau from j*h to (j-1)*h.
    for j in range(n_steps * n_sub, 0, -1):
        tau = j * h
        if j % n_sub == 0:
            # Activate the nodes of time level i = j // n_sub.
            lo, hi = n_active, n_active + n_nodes
            X[lo:hi] = nodes[:, None, :]
            if A is not None:
                a_prev[lo:hi] = _source(tau, X[lo:hi])
            n_active = hi
        Z = X[:n_active]
        if B is not None:
            if noise is None:
                k1 = _drift(tau, Z)
                k2 = _drift(tau - 0.5 * h, Z + 0.5 * h * k1)
                k3 = _drift(tau - 0.5 * h, Z + 0.5 * h * k2)
                k4 = _drift(tau - h, Z + h * k3)
                Z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            else:
                Z += h * _drift(tau, Z)
        if noise is not None:
            Z += noise(j)[None, :, :]
        if grid.is_torus:
            np.mod(Z, grid.bounds, out=Z)
        elif check_exit:
            inside = grid.contains(Z.reshape(-1, d), slack=exit_slack).reshape(-1, R)
            row_inside = np.all(inside, axis=1)
            fresh = ~row_inside & ~exited_rows[:n_active]
            if np.any(fresh):
                exited_rows[:n_active] |= ~row_inside
                if first_exit is None:
                    r = int(np.argmax(fresh))
                    level = n_steps - r // n_nodes
                    first_exit = (times[level], nodes[r % n_nodes].copy())
        if A is not None:
            a_next = _source(tau - h, Z)
            acc[:n_active] += (0.5 * h) * (a_prev[:n_active] + a_next)
            a_prev[:n_active] = a_next

    values = np.empty((n_steps + 1, n_nodes, R, c))
    feet = np.empty((n_steps + 1, n_nodes, d)) if R == 1 else None
    exited = np.zeros((n_steps + 1, n_nodes), dtype=bool)
    values[0] = _terminal(nodes[:, None, :])
    if feet is not None:
        feet[0] = nodes
    for i in range(1, n_steps + 1):
        lo = (n_steps - i) * n_nodes
        hi = lo + n_nodes
        values[i] = acc[lo:hi] + _terminal(X[lo:hi])
        if feet is not None:
            feet[i] = X[lo:hi, 0, :]
        exited[i] = exited_rows[lo:hi]
    return SweepResult(values=values, feet=feet, exited=exited, first_exit=first_exit)


def foot_expansion(grid, feet_slice):
    """Max edge-wise stretch of the foot map on one time level.

    ``feet_slice`` has shape ``(n_nodes, d)``.  Returns the largest ratio
    ``|foot(x + e) - foot(x)| / |e|`` over grid edges; on a torus the foot
    difference is reduced to the centered fundamental interval, which makes
    the measure a lower bound once the fan exceeds half a period.
    """
    d = grid.dim
    shaped = feet_slice.reshape(*grid.n_points, d)
    dx = grid.spacing
    best = 0.0
    for a in range(d):
        diff = np.diff(shaped, axis=a)
        if grid.is_torus:
            wrap = np.take(shaped, [0], axis=a) - np.take(shaped, [-1], axis=a)
            diff = np.concatenate([diff, wrap], axis=a)
            period = grid.bounds
            diff = (diff + 0.5 * period) % period - 0.5 * period
        if diff.size:
            norms = np.sqrt(np.sum(diff * diff, axis=-1))
            best = max(best, float(np.max(norms)) / dx[a])
    return best
