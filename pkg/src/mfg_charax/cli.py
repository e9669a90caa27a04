"""Command-line front door: JSON run specifications, solvers, CSV outputs.

Coefficients are named built-ins with parameter blocks (plus a polynomial
table escape hatch for 1-d finite problems); there is no embedded
expression language.  Outputs are byte-stable for a fixed seed: floats are
written with shortest round-trip repr and every reduction is ordered, so a
rerun with the same spec and any ``--workers`` value reproduces files
exactly.

Exit codes: 0 success, 2 blow-up before the horizon (the estimate is in
the summary), 3 non-convergence, 4 spec or I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import MfgCharaxError, SegmentTooLongError, SpecError
from .grids import GridFunction, SpaceGrid, TimeGrid
from .metrics import lipschitz_of_values, sup_norm
from .picard import PicardConfig
from . import finite_state, hilbert, verify
from .measure import (
    MeasureProblem,
    default_anchors,
    picard_solve_grad,
    torus_grid,
)

ENV_SEED = "MFG_CHARAX_SEED"

_SOLVER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": ["solve", "continue", "verify"]},
        "tol_sup": {"type": "number", "exclusiveMinimum": 0},
        "max_iters": {"type": "integer", "minimum": 1},
        "lip_cap": {"type": "number", "exclusiveMinimum": 0},
        "segment_shrink": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "mc_samples": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "t_final": {"type": "number", "exclusiveMinimum": 0},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "n_steps": {"type": "integer", "minimum": 1},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "n_sub": {"type": "integer", "minimum": 1},
        "max_steps_per_segment": {"type": "integer", "minimum": 1},
    },
}

_OUTPUT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "directory": {"type": "string"},
        "formats": {"type": "array", "items": {"enum": ["csv", "json"]}},
        "emit_lip_history": {"type": "boolean"},
        "emit_plot_csv": {"type": "boolean"},
    },
}

_COEFF = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "params": {"type": "object"},
    },
    "required": ["name"],
}

_FINITE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "domain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["torus", "box"]},
                "dim": {"type": "integer", "minimum": 1},
                "period": {"type": "number", "exclusiveMinimum": 0},
                "bounds": {"type": "array"},
                "points": {"type": ["integer", "array"]},
            },
            "required": ["kind", "points"],
        },
        "dynamics": _COEFF,
        "u0": _COEFF,
        "lam": {"type": "number", "minimum": 0},
        "shift_map": _COEFF,
    },
    "required": ["domain", "dynamics", "u0"],
}

_HILBERT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "dynamics": _COEFF,
        "u0": _COEFF,
        "lambdas": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "solve_box": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bounds": {"type": "array"},
                "points": {"type": ["integer", "array"]},
            },
            "required": ["bounds", "points"],
        },
        "noise": {"type": "boolean"},
    },
    "required": ["n", "dynamics", "u0", "solve_box"],
}

_MEASURE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "cells": {"type": "integer", "minimum": 4},
        "period": {"type": "number", "exclusiveMinimum": 0},
        "hamiltonian": _COEFF,
        "u0": _COEFF,
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "sigma_prime": {"type": "number", "exclusiveMinimum": 0},
        "sigma_0": {"type": "number", "minimum": 0},
        "anchors": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
            },
            "required": ["count"],
        },
    },
    "required": ["cells", "hamiltonian", "u0", "sigma", "sigma_prime"],
}

_VERIFY_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "u_csv": {"type": "string"},
        "v_csv": {"type": "string"},
        "C": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["u_csv", "v_csv"],
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "mfg-charax run specification",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "family": {"enum": ["finite", "hilbert", "measure"]},
        "problem": {"type": "object"},
        "solver": _SOLVER_SCHEMA,
        "output": _OUTPUT_SCHEMA,
        "verify": _VERIFY_SCHEMA,
    },
    "required": ["family", "problem", "solver"],
    "allOf": [
        {"if": {"properties": {"family": {"const": "finite"}}},
         "then": {"properties": {"problem": _FINITE_SCHEMA}}},
        {"if": {"properties": {"family": {"const": "hilbert"}}},
         "then": {"properties": {"problem": _HILBERT_SCHEMA}}},
        {"if": {"properties": {"family": {"const": "measure"}}},
         "then": {"properties": {"problem": _MEASURE_SCHEMA}}},
    ],
}


def _fmt(v):
    return repr(float(v))


# -- spec handling ------------------------------------------------------------


def load_spec(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise SpecError(f"cannot read spec: {e}") from e
    except json.JSONDecodeError as e:
        raise SpecError(f"spec is not valid JSON: {e}") from e


def apply_overrides(spec, overrides):
    """Apply dotted ``key=value`` overrides; values parse as JSON first."""
    for item in overrides:
        if "=" not in item:
            raise SpecError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = spec
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise SpecError(f"override path {key!r} crosses a non-object")
        node[parts[-1]] = value
    return spec


def validate_spec(spec):
    import jsonschema

    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(spec), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "$" + "".join(f".{p}" if isinstance(p, str) else f"[{p}]"
                             for p in e.absolute_path)
        raise SpecError(f"spec invalid at {path}: {e.message}")
    mode = spec["solver"].get("mode", "solve")
    if mode == "verify" and "verify" not in spec:
        raise SpecError("verify mode needs a verify block (u_csv, v_csv)")
    if mode == "continue" and "horizon" not in spec["solver"]:
        raise SpecError("continue mode needs solver.horizon")


def _picard_config(sblock):
    fields = {k: sblock[k] for k in
              ("tol_sup", "max_iters", "lip_cap", "segment_shrink",
               "mc_samples", "seed") if k in sblock}
    env = os.environ.get(ENV_SEED)
    if env is not None:
        fields["seed"] = int(env)
    try:
        return PicardConfig(**fields)
    except ValueError as e:
        raise SpecError(str(e)) from e


# -- coefficient built-ins ------------------------------------------------------


def _poly_eval(terms, X, P):
    out = np.zeros_like(P)
    for a, b, c in terms:
        out += c * (X ** a) * (P ** b)
    return out


def _u0_callback(block, dim):
    name = block["name"]
    params = block.get("params", {})
    if name == "sine":
        amp = params.get("amp", 1.0)
        freq = params.get("freq", 1.0)
        return lambda X: amp * np.sin(2 * np.pi * freq * X[:, 0])
    if name == "cosine":
        amp = params.get("amp", 1.0)
        freq = params.get("freq", 1.0)
        return lambda X: amp * np.cos(2 * np.pi * freq * X[:, 0])
    if name == "constant":
        value = params.get("value", 0.0)
        return lambda X: np.full((X.shape[0],), float(value))
    if name == "linear":
        mat = np.atleast_2d(np.asarray(params.get("matrix", [[1.0]]), dtype=float))
        return lambda X: X @ mat.T
    if name == "polynomial":
        coeffs = list(reversed(params.get("coeffs", [0.0])))
        return lambda X: np.polynomial.polynomial.polyval(X[:, 0], coeffs)
    raise SpecError(f"unknown u0 built-in {name!r}")


def build_finite(pblock):
    dom = pblock["domain"]
    dim = dom.get("dim", 1)
    if dom["kind"] == "torus":
        grid = SpaceGrid("torus", dim, dom.get("period", 1.0), dom["points"])
    else:
        if "bounds" not in dom:
            raise SpecError("box domain needs bounds")
        grid = SpaceGrid("box", dim, dom["bounds"], dom["points"])
    dyn = pblock["dynamics"]
    params = dyn.get("params", {})
    name = dyn["name"]
    if name == "burgers":
        F = lambda X, P: P
        G = lambda X, P: np.zeros_like(P)
    elif name == "linear_decay":
        rate = params.get("rate", 1.0)
        F = lambda X, P: np.zeros_like(P)
        G = lambda X, P: -rate * P
    elif name == "polynomial":
        if dim != 1:
            raise SpecError("polynomial dynamics are 1-d only")
        Ft = params.get("F", [])
        Gt = params.get("G", [])
        F = lambda X, P: _poly_eval(Ft, X, P)
        G = lambda X, P: _poly_eval(Gt, X, P)
    else:
        raise SpecError(f"unknown finite dynamics built-in {name!r}")
    lam = pblock.get("lam", 0.0)
    S = DS = None
    if lam > 0:
        sm = pblock.get("shift_map", {"name": "identity"})
        sp = sm.get("params", {})
        if sm["name"] == "identity":
            S = lambda X: X
            DS = lambda X: np.broadcast_to(np.eye(dim), (X.shape[0], dim, dim)).copy()
        elif sm["name"] == "shift":
            delta = np.asarray(sp.get("delta", [0.0] * dim), dtype=float)
            S = lambda X: grid.wrap(X + delta)
            DS = lambda X: np.broadcast_to(np.eye(dim), (X.shape[0], dim, dim)).copy()
        else:
            raise SpecError(f"unknown shift map {sm['name']!r}")
    if dim > 1 and pblock["u0"]["name"] != "linear":
        raise SpecError("multi-dimensional finite problems need the 'linear' u0 built-in")
    u0 = _u0_callback(pblock["u0"], dim)
    return finite_state.FiniteProblem(dim=dim, domain=grid, F=F, G=G, u0=u0,
                                      lam=lam, S=S, DS=DS)


def build_hilbert(pblock):
    n = pblock["n"]
    box = SpaceGrid("box", n, pblock["solve_box"]["bounds"], pblock["solve_box"]["points"])
    dyn = pblock["dynamics"]
    params = dyn.get("params", {})
    name = dyn["name"]
    if name == "riccati":
        A0 = np.atleast_2d(np.asarray(params.get("A0", [[1.0]]), dtype=float))
        if A0.shape != (n, n):
            raise SpecError("riccati A0 must be n x n")
        F = lambda X, P: P
        G = lambda X, P: np.zeros_like(P)
        u0 = lambda X: X @ A0.T
    elif name == "heat":
        F = lambda X, P: np.zeros_like(P)
        G = lambda X, P: np.zeros_like(P)
        u0_1d = _u0_callback(pblock["u0"], n)

        def u0(X, _f=u0_1d):
            out = np.asarray(_f(X), dtype=float)
            if out.ndim == 1:
                out = np.repeat(out[:, None], n, axis=1)
            return out
    else:
        raise SpecError(f"unknown hilbert dynamics built-in {name!r}")
    lambdas = np.asarray(pblock.get("lambdas", [0.0] * n), dtype=float)
    return hilbert.HilbertProblem(n=n, F=F, G=G, u0=u0, lambdas=lambdas, solve_box=box)


def build_measure(pblock):
    grid = torus_grid(pblock["cells"], pblock.get("period", 1.0))
    ham = pblock["hamiltonian"]
    params = ham.get("params", {})
    name = ham["name"]
    u0b = pblock["u0"]
    u0p = u0b.get("params", {})
    if u0b["name"] != "sine":
        raise SpecError("measure u0 built-in must be 'sine'")
    amp = u0p.get("amp", 0.1)
    freq = u0p.get("freq", 1.0)
    k = 2 * np.pi * freq
    u0 = lambda x, m: (amp / k) * np.sin(k * np.asarray(x))
    grad_u0 = lambda x, m: amp * np.cos(k * np.asarray(x))
    if name == "quadratic":
        coef = params.get("coef", 1.0)
        H = lambda x, p, m: 0.5 * coef * p ** 2
        D_pH = lambda x, p, m: coef * p
        D_xH = None
        B = lambda x, p, m: p
    elif name == "nonlocal_mean":
        speed = params.get("speed", 1.0)
        H = lambda x, p, m: speed * p * m.mean()
        D_pH = lambda x, p, m: np.full_like(np.asarray(p, dtype=float), speed * m.mean())
        D_xH = None
        B = lambda x, p, m: np.zeros_like(np.asarray(p, dtype=float))
    else:
        raise SpecError(f"unknown measure hamiltonian built-in {name!r}")
    prob = MeasureProblem(H=H, D_pH=D_pH, B=B, u0=u0, grad_u0=grad_u0,
                          sigma=pblock["sigma"], sigma_prime=pblock["sigma_prime"],
                          sigma_0=pblock.get("sigma_0", 0.0), D_xH=D_xH)
    ab = pblock.get("anchors", {"count": 4})
    anchors = default_anchors(grid, ab["count"], seed=ab.get("seed", 0))
    return prob, anchors


# -- output writers --------------------------------------------------------------


def _write_lip_history_csv(path, history, with_growth=False):
    with open(path, "w", newline="") as fh:
        cols = ["t", "lip_x"]
        if with_growth:
            cols.append("growth")
        fh.write(",".join(cols) + "\n")
        for t, est in history:
            row = [t, est.lip_x]
            if with_growth:
                row.append(est.growth_norm if est.growth_norm is not None else math.nan)
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_segments_csv(path, segments, grid):
    nodes = grid.nodes()
    d = grid.dim
    with open(path, "w", newline="") as fh:
        cols = ["t"] + [f"x{a}" for a in range(d)]
        c = segments[0][2].n_components
        cols += [f"v{k}" for k in range(c)]
        fh.write(",".join(cols) + "\n")
        for si, (t0, t1, g) in enumerate(segments):
            start = 0 if si == 0 else 1  # segment starts repeat the previous end
            for k in range(start, g.time.n_steps + 1):
                t = t0 + g.time.times[k]
                for j in range(grid.n_nodes):
                    row = [t, *nodes[j], *g.values[k, j]]
                    fh.write(",".join(_fmt(v) for v in row) + "\n")


def emit_plot_csv(result, base_path):
    """Write tidy long-format CSVs for plotting.

    ``<base>_values.csv`` holds (t, x..., component, value) rows;
    ``<base>_lip.csv`` holds (t, lip_x[, lip_m][, growth]) rows.  Accepts a
    GridFunction, a ContinuationResult, or a measure WField; output is
    byte-stable for a fixed seed.
    """
    base = str(base_path)
    from .picard import ContinuationResult
    from .measure import WField

    def write_values(fh, rows_iter, d):
        cols = ["t"] + [f"x{a}" for a in range(d)] + ["component", "value"]
        fh.write(",".join(cols) + "\n")
        for t, x, comp, val in rows_iter:
            fh.write(",".join([_fmt(t), *(_fmt(v) for v in x), str(comp), _fmt(val)]) + "\n")

    if isinstance(result, GridFunction):
        grid, nodes = result.grid, result.grid.nodes()

        def rows():
            for k, t in enumerate(result.time.times):
                for j in range(grid.n_nodes):
                    for c in range(result.n_components):
                        yield t, nodes[j], c, result.values[k, j, c]

        with open(base + "_values.csv", "w", newline="") as fh:
            write_values(fh, rows(), grid.dim)
        with open(base + "_lip.csv", "w", newline="") as fh:
            fh.write("t,lip_x\n")
            for k, t in enumerate(result.time.times):
                fh.write(f"{_fmt(t)},{_fmt(lipschitz_of_values(grid, result.values[k]))}\n")
    elif isinstance(result, ContinuationResult):
        grid = result.segments[0][2].grid
        nodes = grid.nodes()

        def rows():
            for si, (t0, t1, g) in enumerate(result.segments):
                start = 0 if si == 0 else 1
                for k in range(start, g.time.n_steps + 1):
                    for j in range(grid.n_nodes):
                        for c in range(g.n_components):
                            yield t0 + g.time.times[k], nodes[j], c, g.values[k, j, c]

        with open(base + "_values.csv", "w", newline="") as fh:
            write_values(fh, rows(), grid.dim)
        with_growth = any(est.growth_norm is not None for _, est in result.lip_history)
        _write_lip_history_csv(base + "_lip.csv", result.lip_history, with_growth)
    elif isinstance(result, WField):
        grid = result.grid
        x = grid.axis(0)
        with open(base + "_values.csv", "w", newline="") as fh:
            fh.write("t,x,anchor,value\n")
            for k, t in enumerate(result.time.times):
                for a in range(len(result.anchors)):
                    for j in range(grid.n_nodes):
                        fh.write(",".join([_fmt(t), _fmt(x[j]), str(a),
                                           _fmt(result.values[k, j, a])]) + "\n")
        with open(base + "_lip.csv", "w", newline="") as fh:
            fh.write("t,lip_x,lip_m\n")
            lm = result.lip_m()
            for k, t in enumerate(result.time.times):
                lx = max(lipschitz_of_values(grid, result.values[k, :, a:a + 1])
                         for a in range(len(result.anchors)))
                fh.write(f"{_fmt(t)},{_fmt(lx)},{_fmt(lm)}\n")
    else:
        raise SpecError(f"emit_plot_csv cannot handle {type(result).__name__}")


def _read_grid_csv(path, grid, n_components):
    """Read a GridFunction CSV written by this package back into arrays."""
    try:
        data = np.genfromtxt(path, delimiter=",", names=True)
    except OSError as e:
        raise SpecError(f"cannot read {path}: {e}") from e
    ts = np.unique(np.round(data["t"], 12))
    n_nodes = grid.n_nodes
    n_t = ts.size
    if data.shape[0] != n_t * n_nodes:
        raise SpecError(f"{path}: row count does not match the problem grid")
    vals = np.empty((n_t, n_nodes, n_components))
    for c in range(n_components):
        col = data[f"v{c}"]
        vals[:, :, c] = col.reshape(n_t, n_nodes)
    time = TimeGrid(float(ts[-1]), n_t - 1)
    return GridFunction(grid, vals, time=time)


# -- run ---------------------------------------------------------------------


def run(spec_path, overrides=(), workers=1, out_dir=None):
    """Execute a run specification; returns the process exit code."""
    try:
        spec = load_spec(spec_path)
        apply_overrides(spec, overrides)
        validate_spec(spec)
        return _dispatch(spec, workers, out_dir)
    except SpecError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except SegmentTooLongError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except MfgCharaxError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


def _dispatch(spec, workers, out_dir):
    family = spec["family"]
    sblock = spec["solver"]
    mode = sblock.get("mode", "solve")
    oblock = spec.get("output", {})
    directory = Path(out_dir or oblock.get("directory", "."))
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise SpecError(f"cannot create output directory: {e}") from e
    cfg = _picard_config(sblock)
    n_sub = sblock.get("n_sub", 4)

    # The worker count is deliberately absent from the outputs: runs with
    # different --workers values must be byte-identical.
    summary = {"mode": mode, "family": family, "seed": cfg.seed}
    exit_code = 0

    if mode == "verify":
        if family != "finite":
            raise SpecError("verify mode supports the finite family")
        problem = build_finite(spec["problem"])
        vb = spec["verify"]
        U = _read_grid_csv(vb["u_csv"], problem.domain, problem.dim)
        V = _read_grid_csv(vb["v_csv"], problem.domain, problem.dim)
        cert = verify.strong_weak_certificate(U, V, problem, C=vb.get("C"))
        summary.update({
            "passed": cert.passed, "epsilon": cert.epsilon,
            "init_gap": cert.init_gap, "sup_gap": cert.sup_gap,
            "bound": cert.bound, "C_used": cert.C_used,
        })
        with open(directory / "certificate.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"verify family={family} passed={cert.passed} "
              f"eps={cert.epsilon:.3g} gap={cert.sup_gap:.3g} C={cert.C_used:.3g}")
        return 0

    if family == "finite":
        problem = build_finite(spec["problem"])
        grid = problem.domain
        if mode == "solve":
            T = sblock.get("t_final", 0.1)
            n_steps = sblock.get("n_steps") or max(1, round(T / sblock.get("dt", T / 50)))
            U, rep = finite_state.picard_solve(problem, T, cfg, n_steps, n_sub=n_sub)
            if not rep.converged:
                print("error: Picard did not converge", file=sys.stderr)
                return 3
            U.to_csv(directory / "U.csv")
            history = [(t, _lip_entry(grid, U.values[k]))
                       for k, t in enumerate(U.time.times)]
            if oblock.get("emit_lip_history", True):
                _write_lip_history_csv(directory / "lip_history.csv", history)
            if oblock.get("emit_plot_csv", False):
                emit_plot_csv(U, directory / "plot")
            final_lip = history[-1][1].lip_x
            summary.update({"t_reached": T, "final_lip": final_lip,
                            "residual": rep.residuals[-1], "iters": rep.iters,
                            "converged": True})
            line = (f"solve family=finite T={T:g} lip={final_lip:.4g} "
                    f"residual={rep.residuals[-1]:.3g}")
        else:
            horizon = sblock["horizon"]
            dt = sblock.get("dt", horizon / 1000)
            res = finite_state.continue_to_blowup(
                problem, horizon, cfg, dt, n_sub=n_sub,
                max_steps_per_segment=sblock.get("max_steps_per_segment", 64))
            _write_segments_csv(directory / "U.csv", res.segments, grid)
            if oblock.get("emit_lip_history", True):
                _write_lip_history_csv(directory / "lip_history.csv", res.lip_history)
            if oblock.get("emit_plot_csv", False):
                emit_plot_csv(res, directory / "plot")
            final_lip = res.lip_history[-1][1].lip_x
            summary.update({
                "t_reached": res.t_end, "final_lip": final_lip,
                "termination": res.termination,
                "t_c_estimate": (None if math.isinf(res.t_c_estimate)
                                 else res.t_c_estimate),
                "residual": res.reports[-1].residuals[-1] if res.reports else None,
            })
            exit_code = 0 if res.termination == "horizon_reached" else 2
            line = (f"continue family=finite t={res.t_end:g} lip={final_lip:.4g} "
                    f"termination={res.termination}"
                    + ("" if math.isinf(res.t_c_estimate)
                       else f" t_c={res.t_c_estimate:.6g}"))
    elif family == "hilbert":
        problem = build_hilbert(spec["problem"])
        grid = problem.solve_box
        noise = spec["problem"].get("noise", False)
        if mode == "solve":
            T = sblock.get("t_final", 0.1)
            n_steps = sblock.get("n_steps") or max(1, round(T / sblock.get("dt", T / 50)))
            U, rep = hilbert.picard_solve_hilbert(problem, T, cfg, n_steps,
                                                  noise=noise, n_sub=n_sub,
                                                  workers=workers)
            if not rep.converged:
                print("error: Picard did not converge", file=sys.stderr)
                return 3
            U.to_csv(directory / "U.csv")
            history = [(t, _lip_entry(grid, U.values[k], growth=True))
                       for k, t in enumerate(U.time.times)]
            if oblock.get("emit_lip_history", True):
                _write_lip_history_csv(directory / "lip_history.csv", history,
                                       with_growth=True)
            if oblock.get("emit_plot_csv", False):
                emit_plot_csv(U, directory / "plot")
            final_lip = history[-1][1].lip_x
            summary.update({"t_reached": T, "final_lip": final_lip,
                            "residual": rep.residuals[-1], "iters": rep.iters,
                            "converged": True})
            line = (f"solve family=hilbert T={T:g} lip={final_lip:.4g} "
                    f"residual={rep.residuals[-1]:.3g}")
        else:
            horizon = sblock["horizon"]
            dt = sblock.get("dt", horizon / 1000)
            res = hilbert.continue_to_blowup_hilbert(
                problem, horizon, cfg, dt, noise=noise, n_sub=n_sub,
                max_steps_per_segment=sblock.get("max_steps_per_segment", 64),
                workers=workers)
            _write_segments_csv(directory / "U.csv", res.segments, grid)
            if oblock.get("emit_lip_history", True):
                _write_lip_history_csv(directory / "lip_history.csv",
                                       res.lip_history, with_growth=True)
            if oblock.get("emit_plot_csv", False):
                emit_plot_csv(res, directory / "plot")
            final_lip = res.lip_history[-1][1].lip_x
            summary.update({
                "t_reached": res.t_end, "final_lip": final_lip,
                "termination": res.termination,
                "t_c_estimate": (None if math.isinf(res.t_c_estimate)
                                 else res.t_c_estimate),
            })
            exit_code = 0 if res.termination == "horizon_reached" else 2
            line = (f"continue family=hilbert t={res.t_end:g} lip={final_lip:.4g} "
                    f"termination={res.termination}"
                    + ("" if math.isinf(res.t_c_estimate)
                       else f" t_c={res.t_c_estimate:.6g}"))
    else:  # measure
        if mode != "solve":
            raise SpecError("the measure family supports solve mode only")
        problem, anchors = build_measure(spec["problem"])
        T = sblock.get("t_final", 0.1)
        n_steps = sblock.get("n_steps", 8)
        W, rep = picard_solve_grad(problem, T, cfg, anchors, n_steps=n_steps,
                                   n_sub=n_sub, workers=workers)
        if not rep.converged:
            print("error: Picard did not converge", file=sys.stderr)
            return 3
        emit_plot_csv(W, directory / "W")
        with open(directory / "d1_diagnostics.csv", "w", newline="") as fh:
            fh.write("anchor_i,anchor_j,d1\n")
            from .measure import d1_distance
            for i in range(len(anchors)):
                for j in range(i + 1, len(anchors)):
                    fh.write(f"{i},{j},{_fmt(d1_distance(anchors[i], anchors[j]))}\n")
        lip_x, lip_m = W.lip_x(), W.lip_m()
        summary.update({"t_reached": T, "final_lip": lip_x, "lip_m": lip_m,
                        "lip_total": lip_x + lip_m,
                        "residual": rep.residuals[-1], "iters": rep.iters,
                        "converged": True})
        line = (f"solve family=measure T={T:g} lip_x={lip_x:.4g} "
                f"lip_m={lip_m:.4g} residual={rep.residuals[-1]:.3g}")

    with open(directory / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(line)
    return exit_code


def _lip_entry(grid, vals, growth=False):
    from .metrics import LipEstimate, growth_norm_of_values
    return LipEstimate(
        lip_x=lipschitz_of_values(grid, vals),
        sup_norm=sup_norm(vals),
        growth_norm=growth_norm_of_values(grid, vals) if growth else None,
    )


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="mfg-charax",
        description="Characteristic-representation solvers for MFG master equations",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("solve", "solve on a fixed horizon"),
                        ("continue", "continue segment by segment toward blow-up"),
                        ("verify", "certify a candidate solution against a solve")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--spec", required=True, help="JSON run specification")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a spec entry (repeatable)")
        p.add_argument("--workers", type=int, default=1,
                       help="max worker threads (outputs identical for all values)")
        p.add_argument("--out", default=None, help="output directory")
    sub.add_parser("schema", help="print the run-specification JSON schema")

    args = parser.parse_args(argv)
    if args.command == "schema":
        print(json.dumps(SCHEMA, indent=2, sort_keys=True))
        return 0
    overrides = list(args.overrides) + [f"solver.mode={args.command}"]
    return run(args.spec, overrides, workers=args.workers, out_dir=args.out)


if __name__ == "__main__":
    sys.exit(main())
