"""Characteristic-representation solvers for mean-field-game master equations.

Three problem families share one fixed-point skeleton: transport the
initial condition along backward characteristics while integrating a
source, then close the loop by evaluating the coefficients on the current
iterate.  Picard iteration converges on short time segments; continuation
chains segments and tracks the spatial Lipschitz constant of the iterates
to estimate the maximal existence time, past which no Lipschitz solution
exists.
"""

from .errors import (
    BlowupReachedError,
    CoefficientError,
    DomainViolationError,
    GridError,
    MfgCharaxError,
    RepresentabilityWarning,
    SegmentTooLongError,
    SpecError,
)
from .grids import GridFunction, SpaceGrid, TimeGrid, interpolate
from .metrics import LipEstimate, growth_norm, lipschitz_x, sup_norm
from .picard import ContinuationResult, PicardConfig, PicardReport
from .sampling import PathBatch

__version__ = "0.1.0"

__all__ = [
    "BlowupReachedError",
    "CoefficientError",
    "ContinuationResult",
    "DomainViolationError",
    "GridError",
    "GridFunction",
    "LipEstimate",
    "MfgCharaxError",
    "PathBatch",
    "PicardConfig",
    "PicardReport",
    "RepresentabilityWarning",
    "SegmentTooLongError",
    "SpaceGrid",
    "SpecError",
    "TimeGrid",
    "growth_norm",
    "interpolate",
    "lipschitz_x",
    "sup_norm",
]
