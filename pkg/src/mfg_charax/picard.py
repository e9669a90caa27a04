"""Fixed-point iteration bookkeeping shared by all solver families."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainViolationError, GridError
from .metrics import LipEstimate


@dataclass(frozen=True)
class PicardConfig:
    """Tunables of one Picard run.

    ``tol_sup`` is the stopping tolerance on the sup-norm fixed-point
    residual; ``lip_cap`` is the Lipschitz threshold at which a continuation
    declares blow-up; ``segment_shrink`` multiplies the segment length after
    a failed segment.  ``mc_samples`` and ``seed`` only matter for the
    stochastic solvers.
    """

    tol_sup: float = 1e-6
    max_iters: int = 60
    lip_cap: float = 1e3
    segment_shrink: float = 0.5
    mc_samples: int = 4096
    seed: int = 0

    def __post_init__(self):
        if self.tol_sup <= 0:
            raise ValueError("tol_sup must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.lip_cap <= 0:
            raise ValueError("lip_cap must be positive")
        if not 0.0 < self.segment_shrink < 1.0:
            raise ValueError("segment_shrink must lie in (0, 1)")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be positive")


@dataclass(frozen=True)
class PicardReport:
    """Residual history of one Picard run.

    ``contraction_factor`` is the max ratio of consecutive residuals from
    the third residual on (the first ratio is contaminated by the initial
    guess); it is < 1 whenever the run converged on a valid segment.
    """

    iters: int
    residuals: tuple
    converged: bool

    @property
    def contraction_factor(self):
        res = self.residuals
        ratios = []
        for i in range(2, len(res)):
            if res[i - 1] > 0:
                ratios.append(res[i] / res[i - 1])
            elif res[i] == 0:
                ratios.append(0.0)
        if not ratios and len(res) >= 2 and res[0] > 0:
            ratios.append(res[1] / res[0])
        return max(ratios) if ratios else 0.0


def run_fixed_point(apply_map, initial, cfg: PicardConfig):
    """Iterate ``u <- apply_map(u)`` on raw value arrays until the sup-norm
    residual drops below ``cfg.tol_sup``.

    Returns ``(final_values, PicardReport, last_map_aux)`` where
    ``last_map_aux`` is whatever ``apply_map`` returned as a second item
    (``apply_map`` may return either ``values`` or ``(values, aux)``).

    Raises nothing itself: divergence detection is left to callers, which
    see the residual history in the report.
    """
    u = np.asarray(initial, dtype=float)
    residuals = []
    aux = None
    converged = False
    for _ in range(cfg.max_iters):
        out = apply_map(u)
        if isinstance(out, tuple):
            u_next, aux = out
        else:
            u_next, aux = out, None
        res = float(np.max(np.abs(u_next - u))) if u.size else 0.0
        residuals.append(res)
        u = u_next
        if not np.isfinite(res):
            break
        if res <= cfg.tol_sup:
            converged = True
            break
        # Sustained growth cannot recover: three increasing residuals in a
        # row with the last above the first mean the map is expanding.
        if len(residuals) >= 3 and residuals[-1] > residuals[-2] > residuals[-3] > cfg.tol_sup:
            break
    report = PicardReport(iters=len(residuals), residuals=tuple(residuals), converged=converged)
    return u, report, aux


def diverging(report: PicardReport):
    """True when a finished run shows non-contraction (caller should shrink T)."""
    if report.converged:
        return False
    if report.residuals and not math.isfinite(report.residuals[-1]):
        return True
    return report.contraction_factor >= 1.0


@dataclass(frozen=True)
class ContinuationResult:
    """Outcome of a segment-by-segment continuation toward blow-up.

    ``segments`` are contiguous ``(t_start, t_end, GridFunction)`` triples;
    ``lip_history`` is sampled at t=0 and at every accepted segment end;
    ``t_c_estimate`` is ``math.inf`` when the horizon was reached.
    """

    segments: tuple
    lip_history: tuple
    t_c_estimate: float
    termination: str
    reports: tuple = field(default=(), compare=False)

    _TERMINATIONS = ("horizon_reached", "lip_cap_exceeded", "segment_underflow")

    def __post_init__(self):
        if self.termination not in self._TERMINATIONS:
            raise ValueError(f"unknown termination {self.termination!r}")
        for (a, _, _), (_, b, _) in zip(self.segments[1:], self.segments[:-1]):
            if abs(a - b) > 1e-9:
                raise ValueError("segments must be contiguous in time")

    @property
    def t_end(self):
        return self.segments[-1][1] if self.segments else 0.0

    def slice_at(self, t):
        """Solution values at absolute time ``t`` from the owning segment."""
        if not self.segments:
            raise GridError("continuation holds no accepted segments")
        for t0, t1, g in self.segments:
            if t <= t1 + 1e-12:
                return g.slice_at(min(max(t - t0, 0.0), g.time.t_max))
        raise DomainViolationError(
            f"time {t} beyond last accepted segment end {self.t_end}", t=t
        )


def lip_history_entry(t, lip_x, sup, lip_m=None, growth=None):
    return (float(t), LipEstimate(lip_x=lip_x, sup_norm=sup, lip_m=lip_m, growth_norm=growth))
