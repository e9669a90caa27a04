"""Solver for the Hilbertian master equation on a finite truncation R^n.

The deterministic case reuses the backward-characteristic transport of the
finite-state module on a representation box; the common-noise case replaces
the flow by the SDE  dX^i = B^i(t-s, X) ds + sqrt(2 lambda_i) dW^i  and the
point evaluation by a Monte Carlo average (Feynman-Kac).  Initial data may
grow linearly; it enters through analytic callbacks, so characteristics that
leave the box lose no accuracy in the terminal term, while grid iterates are
extended linearly beyond the box (a representability warning is emitted).

Brownian increments are drawn once per Picard run and reused across
iterations (common random numbers), which makes the fixed-point map
deterministic; reductions over path chunks run in a fixed order, so results
are bit-identical for any worker count.

When the state space is read as square-integrable random variables, the
field computed here corresponds to the spatial gradient of a value function
of the underlying measure-coupled game evaluated along the lift; only the
finite-dimensional evaluation is implemented.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    BlowupReachedError,
    GridError,
    RepresentabilityWarning,
    SegmentTooLongError,
)
from .grids import GridFunction, SpaceGrid, TimeGrid, as_space_callback
from .metrics import growth_norm_of_values, lipschitz_of_values, sup_norm
from .picard import (
    ContinuationResult,
    PicardConfig,
    diverging,
    lip_history_entry,
    run_fixed_point,
)
from .sampling import PathBatch, ordered_map
from . import transport


@dataclass(frozen=True, eq=False)
class HilbertProblem:
    """Truncated Hilbert-space problem data.

    ``lambdas`` are the per-coordinate common-noise intensities (their sum
    is finite automatically at finite ``n``, which is the standing
    hypothesis of the infinite-dimensional statement).  ``u0`` must be an
    analytic vectorized callback ``X -> (m, n)``; it may grow linearly.
    ``solve_box`` is the box on which solutions are represented.
    """

    n: int
    F: object
    G: object
    u0: object
    lambdas: np.ndarray
    solve_box: SpaceGrid

    def __init__(self, n, F, G, u0, lambdas, solve_box):
        lambdas = np.broadcast_to(np.atleast_1d(np.asarray(lambdas, dtype=float)), (n,)).copy()
        if np.any(lambdas < 0):
            raise ValueError("lambdas must be nonnegative")
        if solve_box.kind != "box" or solve_box.dim != n:
            raise GridError("solve_box must be a box grid of dimension n")
        lambdas.setflags(write=False)
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "lambdas", lambdas)
        object.__setattr__(self, "solve_box", solve_box)

    def u0_eval(self):
        return as_space_callback(self.u0, self.solve_box)


@dataclass(eq=False)
class StochasticField:
    """Monte Carlo estimator with its per-node standard error."""

    mean: GridFunction
    stderr: np.ndarray

    @property
    def values(self):
        return self.mean.values


def _warn_exits(exited, where):
    n_bad = int(np.count_nonzero(exited))
    if n_bad:
        warnings.warn(
            f"{where}: {n_bad} characteristic node(s) left the solve box; "
            "grid iterates were extended linearly",
            RepresentabilityWarning,
            stacklevel=3,
        )


def psi_deterministic(T, A, B, u0, grid: SpaceGrid, n_steps, n_sub=4, interp="linear"):
    """Deterministic transport operator on the representation box.

    Same contract as the finite-state transport except that characteristics
    may leave the box: the terminal term uses the analytic ``u0`` callback
    and a representability warning is emitted instead of an error.
    """
    time = TimeGrid(T, n_steps)
    u0_fn = as_space_callback(u0, grid)
    res = transport.sweep(grid, time.times, n_sub, A, B, u0_fn,
                          exit_slack=0.0 if not grid.is_torus else None)
    _warn_exits(res.exited, "psi_deterministic")
    values = res.values[:, :, 0, :]
    finite = bool(np.all(np.isfinite(values)))
    return GridFunction(grid, values, time=time, interp=interp, diverged=not finite), res.feet


def make_path_batch(cfg: PicardConfig, n_steps, n_sub, n_coords, T):
    """Increments matching the substep layout of a Feynman-Kac sweep."""
    h = (T / n_steps) / n_sub
    return PathBatch(n_paths=cfg.mc_samples, n_steps=n_steps * n_sub,
                     n_coords=n_coords, dt=h, seed=cfg.seed)


def psi_feynman_kac(T, A, B, u0, lambdas, batch: PathBatch, grid: SpaceGrid,
                    n_steps, n_sub=4, interp="linear", workers=1):
    """Feynman-Kac transport: Monte Carlo over Euler-Maruyama paths.

    Per-coordinate volatilities are ``sqrt(2 lambda_i)``; the increments in
    ``batch`` must have variance equal to the substep ``T / (n_steps n_sub)``
    (see :func:`make_path_batch`).  Returns the per-node estimator together
    with its standard error; the reduction over path chunks is ordered, so
    the output does not depend on ``workers``.
    """
    time = TimeGrid(T, n_steps)
    if batch.n_steps != n_steps * n_sub:
        raise ValueError("batch step count does not match n_steps * n_sub")
    expected_h = time.dt / n_sub
    if not math.isclose(batch.dt, expected_h, rel_tol=1e-12):
        raise ValueError("batch increment variance does not match the substep")
    u0_fn = as_space_callback(u0, grid)
    vol = np.sqrt(2.0 * np.asarray(lambdas, dtype=float))

    def run_chunk(index):
        start, stop, inc = batch.chunk(index)
        kicks = inc * vol[None, None, :]

        def noise(j):
            return kicks[:, j - 1, :]

        res = transport.sweep(grid, time.times, n_sub, A, B, u0_fn,
                              noise=noise, n_replicas=stop - start,
                              exit_slack=0.0 if not grid.is_torus else None)
        vals = res.values
        return (vals.sum(axis=2), (vals * vals).sum(axis=2),
                res.exited.copy())

    partials = ordered_map(run_chunk, range(batch.n_chunks), workers=workers)
    s1 = partials[0][0]
    s2 = partials[0][1]
    exited = partials[0][2]
    for p1, p2, pe in partials[1:]:
        s1 = s1 + p1
        s2 = s2 + p2
        exited |= pe
    _warn_exits(exited, "psi_feynman_kac")
    n = batch.n_paths
    mean = s1 / n
    if n > 1:
        var = np.maximum(s2 - n * mean * mean, 0.0) / (n - 1)
        stderr = np.sqrt(var / n)
    else:
        stderr = np.zeros_like(mean)
    finite = bool(np.all(np.isfinite(mean)))
    gf = GridFunction(grid, mean, time=time, interp=interp, diverged=not finite)
    return StochasticField(mean=gf, stderr=stderr)


def _phi_hilbert(problem, time, interp, n_sub, noise, batch, workers):
    """Build one application of the Hilbert fixed-point map as a closure."""
    grid = problem.solve_box

    def apply_map(vals):
        U = GridFunction(grid, vals, time=time, interp=interp, diverged=True)

        def u_eval(tau, X):
            return grid.interp(U.slice_at(tau), X, method=U.interp,
                               out_of_bounds="extrapolate")

        def B(tau, X):
            return -np.asarray(problem.F(X, u_eval(tau, X)), dtype=float)

        def A(tau, X):
            return np.asarray(problem.G(X, u_eval(tau, X)), dtype=float)

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RepresentabilityWarning)
            if noise:
                field = psi_feynman_kac(time.t_max, A, B, problem.u0, problem.lambdas,
                                        batch, grid, time.n_steps, n_sub,
                                        interp=interp, workers=workers)
                return field.values, None
            out, feet = psi_deterministic(time.t_max, A, B, problem.u0, grid,
                                          time.n_steps, n_sub, interp=interp)
            return out.values, feet

    return apply_map


def picard_solve_hilbert(problem: HilbertProblem, T, cfg: PicardConfig, n_steps,
                         noise=False, n_sub=4, u0_eval=None, interp="linear",
                         workers=1):
    """Fixed-point iteration of U -> Psi(T, G(., U), -F(., U), U0).

    ``noise=True`` switches to the Feynman-Kac operator with a path batch
    frozen from ``cfg.seed`` for the whole run (common random numbers).
    """
    U, report, _ = _picard_hilbert_feet(problem, T, cfg, n_steps, noise, n_sub,
                                        u0_eval, interp, workers)
    return U, report


def _picard_hilbert_feet(problem, T, cfg, n_steps, noise, n_sub, u0_eval, interp,
                         workers, lip_seed=None):
    grid = problem.solve_box
    time = TimeGrid(T, n_steps)
    u0_fn = u0_eval if u0_eval is not None else problem.u0_eval()
    nodes = grid.nodes()
    u0_nodes = np.atleast_2d(np.asarray(u0_fn(nodes), dtype=float))
    init = np.broadcast_to(u0_nodes, (n_steps + 1, *u0_nodes.shape)).copy()
    if lip_seed is None:
        lip_seed = lipschitz_of_values(grid, u0_nodes)
    prob = problem if u0_eval is None else HilbertProblem(
        n=problem.n, F=problem.F, G=problem.G, u0=u0_fn,
        lambdas=problem.lambdas, solve_box=grid)
    batch = make_path_batch(cfg, n_steps, n_sub, problem.n, T) if noise else None
    apply_map = _phi_hilbert(prob, time, interp, n_sub, noise, batch, workers)
    vals, report, feet = run_fixed_point(apply_map, init, cfg)
    if diverging(report):
        raise SegmentTooLongError(
            f"no contraction on [0, {T:g}] "
            f"(factor {report.contraction_factor:.3g} after {report.iters} iterations)",
            report=report,
        )
    if report.converged and feet is not None:
        lip_end = max(
            lipschitz_of_values(grid, vals[-1]),
            lip_seed * transport.foot_expansion(grid, feet[-1]),
        )
        if lip_end >= cfg.lip_cap:
            raise SegmentTooLongError(
                f"Lipschitz detector {lip_end:.3g} crossed the cap "
                f"{cfg.lip_cap:g} within [0, {T:g}]",
                report=report, reason="lip_cap",
            )
    U = GridFunction(grid, vals, time=time, interp=interp,
                     diverged=not bool(np.all(np.isfinite(vals))))
    return U, report, feet


def continue_to_blowup_hilbert(problem: HilbertProblem, t_horizon, cfg: PicardConfig,
                               dt, noise=False, n_sub=4, max_steps_per_segment=64,
                               interp="linear", workers=1):
    """Segment continuation with both the Lipschitz and growth norms capped.

    Scheduling and blow-up detection follow the finite-state continuation;
    the growth norm (linear-growth control of the iterates) shares the cap
    ``cfg.lip_cap``.
    """
    if t_horizon <= 0:
        raise ValueError("t_horizon must be positive")
    grid = problem.solve_box
    total_steps = max(1, round(t_horizon / dt))
    nodes = grid.nodes()
    u0_fn = problem.u0_eval()
    seed_vals = np.atleast_2d(np.asarray(u0_fn(nodes), dtype=float))

    def _entry(t, vals):
        return lip_history_entry(
            t, lipschitz_of_values(grid, vals), sup_norm(vals),
            growth=growth_norm_of_values(grid, vals),
        )

    lip_meas = lipschitz_of_values(grid, seed_vals)
    lip_track = lip_meas
    history = [_entry(0.0, seed_vals)]
    segments = []
    reports = []
    steps_done = 0

    def _result(termination):
        t_c = math.inf if termination == "horizon_reached" else steps_done * dt
        return ContinuationResult(
            segments=tuple(segments), lip_history=tuple(history),
            t_c_estimate=t_c, termination=termination, reports=tuple(reports),
        )

    if max(lip_meas, history[0][1].growth_norm) >= cfg.lip_cap:
        return _result("lip_cap_exceeded")

    seed_eval = u0_fn
    while steps_done < total_steps:
        lip_detect = max(lip_meas, lip_track)
        sched = 0.5 / (1.0 + lip_detect)
        n_seg = min(max_steps_per_segment, int(sched / dt + 1e-12),
                    total_steps - steps_done)
        if n_seg < 1:
            return _result("segment_underflow")
        fail_reason = "segment_underflow"
        while True:
            try:
                U_seg, rep, feet = _picard_hilbert_feet(
                    problem, n_seg * dt, cfg, n_seg, noise, n_sub,
                    seed_eval, interp, workers, lip_seed=lip_detect,
                )
                if rep.converged:
                    break
            except SegmentTooLongError as err:
                if err.reason == "lip_cap":
                    fail_reason = "lip_cap_exceeded"
            n_seg = int(n_seg * cfg.segment_shrink)
            if n_seg < 1:
                return _result(fail_reason)
        t0 = steps_done * dt
        steps_done += n_seg
        t1 = steps_done * dt
        segments.append((t0, t1, U_seg))
        reports.append(rep)
        seed_vals = U_seg.values[-1]
        lip_meas = lipschitz_of_values(grid, seed_vals)
        if feet is not None:
            lip_track = max(lip_meas, lip_track * transport.foot_expansion(grid, feet[-1]))
        else:
            lip_track = lip_meas
        history.append(_entry(t1, seed_vals))
        if max(lip_meas, lip_track, history[-1][1].growth_norm) >= cfg.lip_cap:
            return _result("lip_cap_exceeded")
        seed_eval = _slice_eval(grid, seed_vals, interp)
    return _result("horizon_reached")


def _slice_eval(grid, slice_vals, interp):
    vals = np.asarray(slice_vals, dtype=float)

    def _eval(X):
        return grid.interp(vals, X, method=interp, out_of_bounds="extrapolate")

    return _eval


def riccati_reference(A0, t):
    """Closed form A0 (I + t A0)^{-1} of dA/dt + A^2 = 0 for symmetric A0.

    Computed through the eigendecomposition (componentwise a/(1 + t a));
    raises :class:`BlowupReachedError` when I + t A0 is singular.
    """
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    if not np.allclose(A0, A0.T, atol=1e-12):
        raise ValueError("A0 must be symmetric")
    w, V = np.linalg.eigh(A0)
    denom = 1.0 + t * w
    if np.any(np.abs(denom) < 1e-12 * max(1.0, float(np.max(np.abs(t * w))))):
        raise BlowupReachedError(f"I + t A0 singular at t = {t}")
    return (V * (w / denom)) @ V.T
