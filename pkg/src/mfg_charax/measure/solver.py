"""Gradient-equation solver on the space of torus measures.

The unknown W(t, x, m) plays the role of the spatial gradient of the value
function.  Its characteristic representation couples one deterministic
Fokker-Planck path per (horizon, start measure) with a cloud of particle
paths:

    X:  dX_s = b(t-s, X_s, m(s)) ds + sqrt(2 sigma) dW_s,
    m:  dm/ds = -div(F(t-s, x, m) m) + sigma' lap(m),

and W(t, x, m*) is the Monte Carlo average of the source integral along X
plus the terminal datum.  The measure axis is discretized by a finite set
of anchor measures; between anchors W is blended with inverse-distance
weights in the Monge-Kantorovich metric.

Sign conventions: the particle drift is ``b = -D_pH`` so that the
quadratic Hamiltonian reproduces the viscous Burgers dynamics of the
gradient, the measure drift enters the Fokker-Planck equation as ``+B``,
and the source is ``-D_xH``; the decoupled Cole-Hopf oracle in the test
suite pins all three.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import CoefficientError, GridError, SegmentTooLongError
from ..grids import TimeGrid
from ..metrics import lipschitz_of_values, sup_norm
from ..picard import PicardConfig, diverging, run_fixed_point
from ..sampling import PathBatch, ordered_map
from .fokker_planck import fokker_planck_solve
from .state import MeasureState, d1_distance, translate_density


@dataclass(frozen=True)
class MeasureProblem:
    """Data of the master equation on P(torus), d = 1.

    ``H(x, p, m)``, ``D_pH``, ``D_xH`` and ``B(x, p, m)`` are vectorized in
    ``x`` and ``p`` (arrays of equal shape) with ``m`` a MeasureState;
    ``D_xH`` may be None for a Hamiltonian without x-dependence.  ``u0`` and
    ``grad_u0`` map ``(x, m)`` to values.  ``m_samples`` is the default
    anchor set for the measure axis.
    """

    H: object
    D_pH: object
    B: object
    u0: object
    grad_u0: object
    sigma: float
    sigma_prime: float
    sigma_0: float = 0.0
    D_xH: object = None
    m_samples: tuple = ()

    def __post_init__(self):
        if self.sigma <= 0 or self.sigma_prime <= 0:
            raise ValueError("sigma and sigma_prime must be positive")
        if self.sigma_0 < 0:
            raise ValueError("sigma_0 must be nonnegative")

    def check_gradients(self, anchors, n_points=100, seed=0, rel_tol=1e-4):
        """Spot-check D_pH (and D_xH when given) against H by central
        differences at random (x, p, anchor) triples."""
        rng = np.random.default_rng(seed)
        grid = anchors[0].grid
        period = float(grid.bounds[0])
        x = rng.uniform(0.0, period, n_points)
        p = rng.normal(scale=1.0, size=n_points)
        m = anchors[rng.integers(len(anchors))]
        eps = 1e-5
        dp = (np.asarray(self.H(x, p + eps, m)) - np.asarray(self.H(x, p - eps, m))) / (2 * eps)
        got = np.asarray(self.D_pH(x, p, m), dtype=float)
        scale = max(1.0, float(np.max(np.abs(got))))
        if np.max(np.abs(dp - got)) > rel_tol * scale * 10:
            raise CoefficientError("D_pH is inconsistent with H")
        if self.D_xH is not None:
            dx = (np.asarray(self.H(x + eps, p, m)) - np.asarray(self.H(x - eps, p, m))) / (2 * eps)
            gotx = np.asarray(self.D_xH(x, p, m), dtype=float)
            scalex = max(1.0, float(np.max(np.abs(gotx))))
            if np.max(np.abs(dx - gotx)) > rel_tol * scalex * 10:
                raise CoefficientError("D_xH is inconsistent with H")


@dataclass(eq=False)
class WField:
    """Field on (time grid) x (space grid) x (anchor set).

    ``values[k, j, a]`` holds the sample at time node k, cell j, anchor a;
    ``stderr`` carries the Monte Carlo standard error of the same entries.
    Evaluation interpolates linearly in (t, x) and blends anchors with
    inverse Monge-Kantorovich weights (exact hit -> that anchor alone).
    """

    grid: object
    time: TimeGrid
    anchors: tuple
    values: np.ndarray
    stderr: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        expected = (self.time.n_steps + 1, self.grid.n_nodes, len(self.anchors))
        if self.values.shape != expected:
            raise GridError(f"values shape {self.values.shape} != {expected}")

    def anchor_weights(self, m: MeasureState):
        d = np.array([d1_distance(m, a) for a in self.anchors])
        hit = d < 1e-12
        if np.any(hit):
            w = hit.astype(float)
        else:
            w = 1.0 / d
        return w / w.sum()

    def _slice_at(self, t):
        dt = self.time.dt
        t = min(max(t, 0.0), self.time.t_max)
        u = t / dt
        k = min(int(u), self.time.n_steps - 1)
        w = u - k
        if w == 0.0:
            return self.values[k]
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def eval(self, t, x, m: MeasureState):
        """Interpolated value at time t, points x (flat array), measure m."""
        sl = self._slice_at(t) @ self.anchor_weights(m)
        return self.grid.interp(sl[:, None], np.atleast_1d(x)[:, None])[:, 0]

    def eval_anchor(self, t, x, a_index):
        sl = self._slice_at(t)[:, a_index]
        return self.grid.interp(sl[:, None], np.atleast_1d(x)[:, None])[:, 0]

    def lip_x(self):
        return max(
            lipschitz_of_values(self.grid, self.values[k, :, a])
            for k in range(self.values.shape[0])
            for a in range(len(self.anchors))
        )

    def lip_m(self):
        """Max divided difference over anchor pairs in the d1 metric."""
        best = 0.0
        for a in range(len(self.anchors)):
            for b in range(a + 1, len(self.anchors)):
                d = d1_distance(self.anchors[a], self.anchors[b])
                if d < 1e-12:
                    continue
                gap = float(np.max(np.abs(self.values[:, :, a] - self.values[:, :, b])))
                best = max(best, gap / d)
        return best

    def lip_total(self):
        """Combined regularity constant: sum of the x and m components.

        The max of the two is the other aggregation of interest and is
        recoverable from lip_x()/lip_m() directly.
        """
        return self.lip_x() + self.lip_m()

    def sup_norm(self):
        return float(np.max(np.abs(self.values)))


def _flat_eval(cb, tau, X, m):
    """Evaluate a (tau, x, m) callback on an (M, R) position block."""
    out = np.asarray(cb(tau, X.reshape(-1), m), dtype=float)
    return out.reshape(X.shape)


def psi_grad(T, A, b, F_drift, W0, problem: MeasureProblem, batch: PathBatch,
             anchors, n_steps, n_sub=4, workers=1):
    """Feynman-Kac transport on (time, space, anchor).

    ``A(s, x, m)``, ``b(s, x, m)`` take the reversed time s = horizon -
    elapsed; ``F_drift(s, x, m)`` drives the measure; ``W0(x, m)`` is the
    terminal datum.  ``A`` and ``b`` may be None (zero).  One deterministic
    Fokker-Planck path is solved per (time level, anchor) and shared by all
    Monte Carlo particles; increments come from ``batch`` (variance =
    substep), reduced in fixed chunk order.
    """
    anchors = tuple(anchors)
    grid = anchors[0].grid
    time = TimeGrid(T, n_steps)
    h = time.dt / n_sub
    if batch.n_steps != n_steps * n_sub or not math.isclose(batch.dt, h, rel_tol=1e-12):
        raise ValueError("path batch does not match the substep layout")
    nodes = grid.axis(0)
    M = grid.n_nodes
    vol = math.sqrt(2.0 * problem.sigma)
    n_paths = batch.n_paths

    values = np.empty((n_steps + 1, M, len(anchors)))
    stderr = np.zeros_like(values)

    for ai, anchor in enumerate(anchors):
        values[0, :, ai] = np.asarray(W0(nodes, anchor), dtype=float)
        for i in range(1, n_steps + 1):
            t_i = time.times[i]
            K = i * n_sub

            def fp_drift(s, x, m, t_i=t_i):
                return F_drift(t_i - s, x, m)

            m_path = fokker_planck_solve(fp_drift, problem.sigma_prime, anchor, t_i, K)

            def run_chunk(index, t_i=t_i, K=K, i=i, m_path=m_path):
                start, stop, inc = batch.chunk(index)
                R = stop - start
                X = np.broadcast_to(nodes[:, None], (M, R)).copy()
                acc = np.zeros((M, R)) if A is not None else None
                a_prev = _flat_eval(A, t_i, X, m_path[0]) if A is not None else None
                for k in range(K):
                    tau = t_i - k * h
                    m_s = m_path[k]
                    if b is not None:
                        X += h * _flat_eval(b, tau, X, m_s)
                    X += vol * inc[:, i * n_sub - k - 1, 0][None, :]
                    np.mod(X, grid.bounds[0], out=X)
                    if A is not None:
                        a_next = _flat_eval(A, tau - h, X, m_path[k + 1])
                        acc += (0.5 * h) * (a_prev + a_next)
                        a_prev = a_next
                term = np.asarray(W0(X.reshape(-1), m_path[K]), dtype=float).reshape(M, R)
                vals = term if acc is None else acc + term
                return vals.sum(axis=1), (vals * vals).sum(axis=1)

            partials = ordered_map(run_chunk, range(batch.n_chunks), workers=workers)
            s1 = partials[0][0]
            s2 = partials[0][1]
            for p1, p2 in partials[1:]:
                s1 = s1 + p1
                s2 = s2 + p2
            mean = s1 / n_paths
            values[i, :, ai] = mean
            if n_paths > 1:
                var = np.maximum(s2 - n_paths * mean * mean, 0.0) / (n_paths - 1)
                stderr[i, :, ai] = np.sqrt(var / n_paths)
    if not np.all(np.isfinite(values)):
        raise CoefficientError("psi_grad produced non-finite values")
    return WField(grid=grid, time=time, anchors=anchors, values=values, stderr=stderr)


def _phi_grad(problem, anchors, time, n_sub, batch, workers):
    """One application of the gradient fixed-point map as a closure."""
    grid = anchors[0].grid

    def apply_map(vals):
        Wf = WField(grid=grid, time=time, anchors=anchors, values=vals)

        def b(tau, x, m):
            return -np.asarray(problem.D_pH(x, Wf.eval(tau, x, m), m), dtype=float)

        def F_drift(s, x, m):
            return np.asarray(problem.B(x, Wf.eval(s, x, m), m), dtype=float)

        A = None
        if problem.D_xH is not None:
            def A(tau, x, m):
                return -np.asarray(problem.D_xH(x, Wf.eval(tau, x, m), m), dtype=float)

        out = psi_grad(time.t_max, A, b, F_drift, problem.grad_u0, problem,
                       batch, anchors, time.n_steps, n_sub, workers)
        return out.values, out.stderr

    return apply_map


def picard_solve_grad(problem: MeasureProblem, T, cfg: PicardConfig, anchors=None,
                      n_steps=8, n_sub=4, workers=1, check_gradients=True):
    """Fixed-point iteration for the gradient field W.

    Drift, measure drift and source are closed through the current iterate
    (see the module docstring for the sign conventions); the Brownian
    increments are frozen for the whole run, making the map deterministic.
    Convergence is in sup norm over (time, cell, anchor).
    """
    anchors = tuple(anchors if anchors is not None else problem.m_samples)
    if not anchors:
        raise ValueError("an anchor set is required")
    grid = anchors[0].grid
    if check_gradients:
        problem.check_gradients(anchors)
    time = TimeGrid(T, n_steps)
    h = time.dt / n_sub
    batch = PathBatch(n_paths=cfg.mc_samples, n_steps=n_steps * n_sub,
                      n_coords=1, dt=h, seed=cfg.seed)
    nodes = grid.axis(0)
    init = np.empty((n_steps + 1, grid.n_nodes, len(anchors)))
    for ai, anchor in enumerate(anchors):
        init[:, :, ai] = np.asarray(problem.grad_u0(nodes, anchor), dtype=float)[None, :]

    apply_map = _phi_grad(problem, anchors, time, n_sub, batch, workers)
    vals, report, stderr = run_fixed_point(apply_map, init, cfg)
    if diverging(report):
        raise SegmentTooLongError(
            f"no contraction on [0, {T:g}] "
            f"(factor {report.contraction_factor:.3g} after {report.iters} iterations)",
            report=report,
        )
    return WField(grid=grid, time=time, anchors=anchors, values=vals,
                  stderr=stderr), report


def reconstruct_value(W: WField, problem: MeasureProblem, anchors=None,
                      n_sub=4, workers=1, mc_samples=None, seed=None):
    """Value field U(t, x, m) from a converged gradient field W.

    The particle is driftless (pure sqrt(2 sigma) diffusion), the measure is
    driven by B(., W, .), and the running cost is -H(x, W, m); the terminal
    datum is u0.  Returns a field with the same (t, x, anchor) layout as W.
    """
    anchors = tuple(anchors if anchors is not None else W.anchors)
    time = W.time
    h = time.dt / n_sub
    n_paths = mc_samples if mc_samples is not None else 4096
    batch = PathBatch(n_paths=n_paths, n_steps=time.n_steps * n_sub,
                      n_coords=1, dt=h, seed=seed if seed is not None else 0)

    def A(tau, x, m):
        return -np.asarray(problem.H(x, W.eval(tau, x, m), m), dtype=float)

    def F_drift(s, x, m):
        return np.asarray(problem.B(x, W.eval(s, x, m), m), dtype=float)

    def U0(x, m):
        return np.asarray(problem.u0(x, m), dtype=float)

    return psi_grad(time.t_max, A, None, F_drift, U0, problem, batch,
                    anchors, time.n_steps, n_sub, workers)


def psi_grad_common_noise(T, A, b, F_drift, W0, problem: MeasureProblem,
                          batch: PathBatch, common_batch: PathBatch, anchors,
                          n_steps, n_sub=4, workers=1):
    """Common-noise transport via the translation trick.

    For each common path W', the measure is obtained by solving the
    deterministic Fokker-Planck equation (diffusion sigma') for the
    translated density with the shifted drift
    ``b~(s, y) = drift(s, y + sqrt(2 sigma_0) W'_s)`` and translating the
    result back; particle paths receive both the idiosyncratic and the
    common increments.  Outer average over common paths (their spread gives
    the reported standard error), inner over idiosyncratic paths, both in
    fixed order.
    """
    if problem.sigma_0 <= 0:
        raise ValueError("psi_grad_common_noise needs sigma_0 > 0")
    anchors = tuple(anchors)
    grid = anchors[0].grid
    period = float(grid.bounds[0])
    time = TimeGrid(T, n_steps)
    h = time.dt / n_sub
    for bt in (batch, common_batch):
        if bt.n_steps != n_steps * n_sub or not math.isclose(bt.dt, h, rel_tol=1e-12):
            raise ValueError("path batch does not match the substep layout")
    nodes = grid.axis(0)
    M = grid.n_nodes
    vol = math.sqrt(2.0 * problem.sigma)
    vol0 = math.sqrt(2.0 * problem.sigma_0)
    common = common_batch.increments[:, :, 0]
    Q = common_batch.n_paths

    values = np.empty((n_steps + 1, M, len(anchors)))
    stderr = np.zeros_like(values)

    for ai, anchor in enumerate(anchors):
        values[0, :, ai] = np.asarray(W0(nodes, anchor), dtype=float)
        for i in range(1, n_steps + 1):
            t_i = time.times[i]
            K = i * n_sub

            def run_common(q, t_i=t_i, K=K, i=i, anchor=anchor):
                dW = common[q, :]
                # Common translation at the substep times of this level,
                # tau-aligned like the idiosyncratic increments.
                steps = [dW[i * n_sub - k - 1] for k in range(K)]
                c = vol0 * np.concatenate([[0.0], np.cumsum(steps)])

                def fp_drift(s, y, m_tilde):
                    k = min(int(s / h + 1e-12), K - 1)
                    cs = c[k]
                    m_phys = translate_density(m_tilde, cs)
                    return F_drift(t_i - s, np.mod(y + cs, period), m_phys)

                m_tilde_path = fokker_planck_solve(fp_drift, problem.sigma_prime,
                                                   anchor, t_i, K)
                m_path = [translate_density(m_tilde_path[k], c[k]) for k in range(K + 1)]

                def run_chunk(index):
                    start, stop, inc = batch.chunk(index)
                    R = stop - start
                    X = np.broadcast_to(nodes[:, None], (M, R)).copy()
                    acc = np.zeros((M, R)) if A is not None else None
                    a_prev = _flat_eval(A, t_i, X, m_path[0]) if A is not None else None
                    for k in range(K):
                        tau = t_i - k * h
                        m_s = m_path[k]
                        if b is not None:
                            X += h * _flat_eval(b, tau, X, m_s)
                        X += vol * inc[:, i * n_sub - k - 1, 0][None, :]
                        X += vol0 * steps[k]
                        np.mod(X, period, out=X)
                        if A is not None:
                            a_next = _flat_eval(A, tau - h, X, m_path[k + 1])
                            acc += (0.5 * h) * (a_prev + a_next)
                            a_prev = a_next
                    term = np.asarray(W0(X.reshape(-1), m_path[K]), dtype=float).reshape(M, R)
                    vals = term if acc is None else acc + term
                    return vals.sum(axis=1)

                partials = ordered_map(run_chunk, range(batch.n_chunks), workers=1)
                total = partials[0]
                for p in partials[1:]:
                    total = total + p
                return total / batch.n_paths

            per_common = ordered_map(run_common, range(Q), workers=workers)
            stacked = np.stack(per_common, axis=0)
            values[i, :, ai] = stacked.mean(axis=0)
            if Q > 1:
                stderr[i, :, ai] = stacked.std(axis=0, ddof=1) / math.sqrt(Q)
    if not np.all(np.isfinite(values)):
        raise CoefficientError("psi_grad_common_noise produced non-finite values")
    return WField(grid=grid, time=time, anchors=anchors, values=values, stderr=stderr)
