"""Master-equation solver on probability measures over the 1-d torus."""

from .fokker_planck import fokker_planck_common_noise_direct, fokker_planck_solve
from .solver import (
    MeasureProblem,
    WField,
    picard_solve_grad,
    psi_grad,
    psi_grad_common_noise,
    reconstruct_value,
)
from .state import (
    MeasureState,
    d1_distance,
    default_anchors,
    pushforward,
    translate_density,
    torus_grid,
    wrapped_gaussian_state,
)

__all__ = [
    "MeasureProblem",
    "MeasureState",
    "WField",
    "d1_distance",
    "default_anchors",
    "fokker_planck_common_noise_direct",
    "fokker_planck_solve",
    "picard_solve_grad",
    "psi_grad",
    "psi_grad_common_noise",
    "pushforward",
    "reconstruct_value",
    "torus_grid",
    "translate_density",
    "wrapped_gaussian_state",
]
