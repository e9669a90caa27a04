"""Solver for the finite-state master equation with common-noise jump term.

The equation couples a transport part driven by F, a source G and a jump
term lam * (U - DS(x)^T U(t, S(x))).  Solutions are found as fixed points
of the map

    Phi(U) = Psi(T, G(., U) - lam * (U - DS^T U o S), -F(., U), U0),

where Psi transports an initial condition along backward characteristics
while integrating the source (see :mod:`mfg_charax.transport`).  Picard
iteration of Phi converges on short enough segments; continuation chains
segments and watches the spatial Lipschitz constant to locate the maximal
existence time.

Coefficient callbacks are vectorized: F and G map ``(X, P)`` with shapes
``(m, d)`` to ``(m, d)``; S maps ``(m, d)`` to ``(m, d)``; DS maps
``(m, d)`` to ``(m, d, d)`` Jacobians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CoefficientError,
    DomainViolationError,
    GridError,
    SegmentTooLongError,
)
from .grids import GridFunction, SpaceGrid, TimeGrid, as_space_callback
from .metrics import lipschitz_of_values, sup_norm
from .picard import (
    ContinuationResult,
    PicardConfig,
    diverging,
    lip_history_entry,
    run_fixed_point,
)
from . import transport


@dataclass(frozen=True)
class FiniteProblem:
    """Data of one finite-state master equation.

    ``lam`` and the shift map S (with Jacobian DS) model common noise; they
    may be omitted when ``lam == 0``.  ``u0`` is either a vectorized callback
    ``X -> (m, d)`` or a time-less :class:`GridFunction`.
    """

    dim: int
    domain: SpaceGrid
    F: object
    G: object
    u0: object
    lam: float = 0.0
    S: object = None
    DS: object = None

    def __post_init__(self):
        if self.domain.dim != self.dim:
            raise GridError("problem dim and domain dim disagree")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.lam > 0 and (self.S is None or self.DS is None):
            raise ValueError("lam > 0 requires S and DS")

    def u0_eval(self):
        return as_space_callback(self.u0, self.domain)


@dataclass(frozen=True, eq=False)
class FlowResult:
    """One characteristic path: positions at the flow substeps."""

    path: np.ndarray
    exited: bool


@dataclass
class DomainReport:
    """Outcome of the boundary-invariance check (condition on <eta, F>)."""

    ok: bool
    n_checked: int
    violations: list = field(default_factory=list)
    s_violations: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


def _exit_slack(grid):
    return 1e-7 * float(np.max(grid.spacing))


def validate_domain(problem: FiniteProblem, p_radius, n_boundary=64, n_p=16, seed=0):
    """Check that the drift F never points out of the box domain.

    Samples ``n_boundary`` boundary points and ``n_p`` random momenta with
    ``|p| <= p_radius`` (plus the axis momenta ``+-p_radius * e_a``, which
    catch sign violations deterministically), and requires
    ``<eta(x), F(x, p)> >= -1e-10`` at every pair.  Also checks that S maps
    sampled interior points into the domain.  Never raises on violations;
    the report lists them.
    """
    grid = problem.domain
    if grid.is_torus:
        raise GridError("validate_domain applies to box domains only")
    if p_radius <= 0:
        raise ValueError("p_radius must be positive")
    d = grid.dim
    rng = np.random.default_rng(seed)
    bounds = grid.bounds

    per_face = max(1, math.ceil(n_boundary / (2 * d)))
    xs, etas = [], []
    for a in range(d):
        for side, val in ((0, bounds[a, 0]), (1, bounds[a, 1])):
            pts = rng.uniform(bounds[:, 0], bounds[:, 1], size=(per_face, d))
            pts[:, a] = val
            center = 0.5 * (bounds[:, 0] + bounds[:, 1])
            pts[0] = center
            pts[0, a] = val
            eta = np.zeros((per_face, d))
            eta[:, a] = 1.0 if side else -1.0
            xs.append(pts)
            etas.append(eta)
    X = np.concatenate(xs)
    E = np.concatenate(etas)

    z = rng.standard_normal((n_p, d))
    z /= np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-300)
    P = z * (p_radius * rng.random((n_p, 1)) ** (1.0 / d))
    P = np.concatenate([P, p_radius * np.eye(d), -p_radius * np.eye(d)])

    report = DomainReport(ok=True, n_checked=X.shape[0] * P.shape[0])
    for p in P:
        Pm = np.broadcast_to(p, X.shape)
        vals = np.einsum("md,md->m", E, np.asarray(problem.F(X, Pm), dtype=float))
        bad = vals < -1e-10
        for j in np.nonzero(bad)[0][:10]:
            report.violations.append((X[j].copy(), p.copy(), float(vals[j])))
    if problem.S is not None:
        interior = rng.uniform(bounds[:, 0], bounds[:, 1], size=(max(n_boundary, 8), d))
        SX = np.asarray(problem.S(interior), dtype=float)
        inside = grid.contains(SX, slack=_exit_slack(grid))
        for j in np.nonzero(~inside)[0][:10]:
            report.s_violations.append((interior[j].copy(), SX[j].copy()))
    report.ok = not report.violations and not report.s_violations
    return report


def solve_flow(B, t, x0, n_steps, domain: SpaceGrid):
    """Integrate ``dx/ds = B(t - s, x(s))`` from ``x0`` over ``[0, t]``.

    Classical 4th-order one-step method with ``n_steps`` equal steps; torus
    positions wrap every step.  Returns the path sampled at the step times.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    h = t / n_steps
    path = np.empty((n_steps + 1, x0.size))
    path[0] = domain.wrap(x0)
    x = path[0].copy()
    exited = False
    slack = _exit_slack(domain)

    def f(tau, pt):
        out = np.asarray(B(tau, pt[None, :]), dtype=float).reshape(-1)
        if not np.all(np.isfinite(out)):
            raise CoefficientError(f"drift returned non-finite values at t={tau}")
        return out

    for k in range(n_steps):
        tau = t - k * h
        k1 = f(tau, x)
        k2 = f(tau - 0.5 * h, x + 0.5 * h * k1)
        k3 = f(tau - 0.5 * h, x + 0.5 * h * k2)
        k4 = f(tau - h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if domain.is_torus:
            x = domain.wrap(x)
        elif not bool(domain.contains(x[None, :], slack=slack)[0]):
            exited = True
        path[k + 1] = x
    return FlowResult(path=path, exited=exited)


def psi_transport(T, A, B, u0, grid: SpaceGrid, n_steps, n_sub=4, interp="linear",
                  *, _raise_on_exit=True, _raise_on_nonfinite=True):
    """Transport operator: source integral along backward characteristics
    plus the transported initial condition, on the full time-space grid.

    ``A`` and ``B`` are vectorized callbacks ``(t, X) -> (m, c)`` /
    ``(m, d)`` (either may be None for zero); ``u0`` is a callback or a
    time-less GridFunction.  Quadrature is the trapezoid rule on ``n_sub``
    flow substeps per grid interval.
    """
    time = TimeGrid(T, n_steps)
    u0_fn = as_space_callback(u0, grid)
    res = transport.sweep(
        grid, time.times, n_sub, A, B, u0_fn,
        exit_slack=_exit_slack(grid) if not grid.is_torus else None,
    )
    if _raise_on_exit and res.first_exit is not None:
        t_bad, x_bad = res.first_exit
        raise DomainViolationError(
            f"characteristic through (t={t_bad:g}, x={np.array2string(x_bad)}) left the domain",
            t=t_bad, x=x_bad,
        )
    values = res.values[:, :, 0, :]
    finite = bool(np.all(np.isfinite(values)))
    if not finite and _raise_on_nonfinite:
        raise CoefficientError("transport produced non-finite values")
    gf = GridFunction(grid, values, time=time, interp=interp, diverged=not finite)
    return gf, res.feet


def _jump_source(problem, u_eval):
    """Source term of Phi including the common-noise jump, as a callback."""
    lam = problem.lam

    def A(tau, X):
        u = u_eval(tau, X)
        out = np.asarray(problem.G(X, u), dtype=float)
        if lam > 0:
            SX = np.asarray(problem.S(X), dtype=float)
            uS = u_eval(tau, SX)
            DSm = np.asarray(problem.DS(X), dtype=float)
            out = out - lam * (u - np.einsum("mji,mj->mi", DSm, uS))
        return out

    return A


def phi_map(U: GridFunction, problem: FiniteProblem, n_sub=4, *, tolerant=False):
    """One application of the fixed-point map Phi to the iterate ``U``.

    Returns ``(Phi(U), feet)`` where ``feet[i]`` are the characteristic
    foot points of time level i (used by the continuation to track the
    stretching of the foot map).
    """
    if U.time is None:
        raise GridError("phi_map needs a time-dependent iterate")
    grid = problem.domain
    oob = "clamp" if not grid.is_torus else "raise"

    def u_eval(tau, X):
        return grid.interp(U.slice_at(tau), X, method=U.interp, out_of_bounds=oob)

    def B(tau, X):
        return -np.asarray(problem.F(X, u_eval(tau, X)), dtype=float)

    A = _jump_source(problem, u_eval)
    return psi_transport(
        U.time.t_max, A, B, problem.u0, grid, U.time.n_steps, n_sub,
        interp=U.interp,
        _raise_on_exit=not tolerant, _raise_on_nonfinite=not tolerant,
    )


def picard_solve(problem: FiniteProblem, T, cfg: PicardConfig, n_steps, n_sub=4,
                 u0_eval=None, interp="linear", validate=True):
    """Picard iteration of Phi from the time-constant extension of U0.

    Stops when the sup-norm fixed-point residual drops below
    ``cfg.tol_sup``.  Raises :class:`SegmentTooLongError` when the iteration
    expands instead of contracting, or when the Lipschitz detector (grid
    estimate combined with the stretching of the characteristic foot map)
    crosses ``cfg.lip_cap`` within the segment.
    """
    U, report, _ = _picard_solve_feet(problem, T, cfg, n_steps, n_sub,
                                      u0_eval, interp, validate)
    return U, report


def _picard_solve_feet(problem, T, cfg, n_steps, n_sub, u0_eval, interp, validate,
                       lip_seed=None):
    grid = problem.domain
    if validate and not grid.is_torus:
        rep = validate_domain(problem, p_radius=_p_radius_guess(problem, grid))
        if not rep.ok:
            raise DomainViolationError(
                "boundary invariance <eta(x), F(x,p)> >= 0 fails on the box; "
                f"first violation {rep.violations[:1] or rep.s_violations[:1]}"
            )
    u0_fn = u0_eval if u0_eval is not None else problem.u0_eval()
    time = TimeGrid(T, n_steps)
    nodes = grid.nodes()
    u0_nodes = np.atleast_2d(np.asarray(u0_fn(nodes), dtype=float))
    init = np.broadcast_to(u0_nodes, (n_steps + 1, *u0_nodes.shape)).copy()
    if lip_seed is None:
        lip_seed = lipschitz_of_values(grid, u0_nodes)

    prob = problem if u0_eval is None else _with_u0(problem, u0_fn)

    def apply_map(vals):
        U = GridFunction(grid, vals, time=time, interp=interp, diverged=True)
        out, feet = phi_map(U, prob, n_sub=n_sub, tolerant=True)
        return out.values, feet

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


def _with_u0(problem, u0_fn):
    return FiniteProblem(dim=problem.dim, domain=problem.domain, F=problem.F,
                         G=problem.G, u0=u0_fn, lam=problem.lam, S=problem.S,
                         DS=problem.DS)


def _p_radius_guess(problem, grid):
    u0_fn = problem.u0_eval()
    vals = np.asarray(u0_fn(grid.nodes()), dtype=float)
    return max(1.0, 2.0 * float(np.max(np.abs(vals))))


def continue_to_blowup(problem: FiniteProblem, t_horizon, cfg: PicardConfig, dt,
                       n_sub=4, max_steps_per_segment=64, interp="linear"):
    """Chain Picard segments until the horizon, blow-up, or underflow.

    Segment lengths follow ``min(remaining, 0.5 / (1 + lip))`` (capped at
    ``max_steps_per_segment`` time steps) and shrink by
    ``cfg.segment_shrink`` after a failed segment.  Blow-up detection uses
    ``max(measured lip, telescoped lip)``: the telescoped value multiplies
    the per-segment stretching of the characteristic foot map, which keeps
    growing after the grid-difference estimate saturates at jump resolution.
    """
    if t_horizon <= 0:
        raise ValueError("t_horizon must be positive")
    grid = problem.domain
    if not grid.is_torus:
        rep = validate_domain(problem, p_radius=_p_radius_guess(problem, grid))
        if not rep.ok:
            raise DomainViolationError("boundary invariance fails on the box")
    total_steps = max(1, round(t_horizon / dt))
    nodes = grid.nodes()
    u0_fn = problem.u0_eval()
    seed_vals = np.atleast_2d(np.asarray(u0_fn(nodes), dtype=float))

    lip_meas = lipschitz_of_values(grid, seed_vals)
    lip_track = lip_meas
    history = [lip_history_entry(0.0, lip_meas, sup_norm(seed_vals))]
    segments = []
    reports = []
    steps_done = 0

    def _result(termination):
        t_c = math.inf if termination == "horizon_reached" else steps_done * dt
        return ContinuationResult(
            segments=tuple(segments), lip_history=tuple(history),
            t_c_estimate=t_c, termination=termination, reports=tuple(reports),
        )

    if lip_meas >= cfg.lip_cap:
        return _result("lip_cap_exceeded")

    seed_eval = u0_fn
    while steps_done < total_steps:
        lip_detect = max(lip_meas, lip_track)
        sched = 0.5 / (1.0 + lip_detect)
        n_seg = min(
            max_steps_per_segment,
            int(sched / dt + 1e-12),
            total_steps - steps_done,
        )
        if n_seg < 1:
            return _result("segment_underflow")
        fail_reason = "segment_underflow"
        while True:
            try:
                U_seg, rep, feet = _picard_solve_feet(
                    problem, n_seg * dt, cfg, n_seg, n_sub,
                    seed_eval, interp, False, lip_seed=lip_detect,
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
        expansion = transport.foot_expansion(grid, feet[-1])
        lip_meas = lipschitz_of_values(grid, seed_vals)
        lip_track = max(lip_meas, lip_track * expansion)
        history.append(lip_history_entry(t1, lip_meas, sup_norm(seed_vals)))
        if max(lip_meas, lip_track) >= cfg.lip_cap:
            return _result("lip_cap_exceeded")
        seed_eval = _slice_eval(grid, seed_vals, interp)
    return _result("horizon_reached")


def _slice_eval(grid, slice_vals, interp):
    vals = np.asarray(slice_vals, dtype=float)

    def _eval(X):
        oob = "clamp" if not grid.is_torus else "raise"
        return grid.interp(vals, X, method=interp, out_of_bounds=oob)

    return _eval
