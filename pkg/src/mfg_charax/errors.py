"""Exception hierarchy shared by all solver modules."""


class MfgCharaxError(Exception):
    """Base class for all library errors."""


class GridError(MfgCharaxError):
    """Inconsistent grid construction or grid mismatch between operands."""


class DomainViolationError(MfgCharaxError):
    """A point or characteristic path left the computational domain.

    Carries the offending location so callers can report which node failed.
    """

    def __init__(self, message, t=None, x=None):
        super().__init__(message)
        self.t = t
        self.x = x


class CoefficientError(MfgCharaxError):
    """A user coefficient callback returned NaN/Inf or a bad shape."""


class SegmentTooLongError(MfgCharaxError):
    """Picard iteration failed on the requested horizon.

    ``reason`` is "no_contraction" when the residuals expanded and
    "lip_cap" when the Lipschitz detector crossed the blow-up cap within
    the segment.  The caller should retry on a shorter time segment.
    """

    def __init__(self, message, report=None, reason="no_contraction"):
        super().__init__(message)
        self.report = report
        self.reason = reason


class BlowupReachedError(MfgCharaxError):
    """A closed-form reference is evaluated at or past its blow-up time."""


class SpecError(MfgCharaxError):
    """A run specification failed validation (CLI exit code 4)."""


class RepresentabilityWarning(UserWarning):
    """Characteristic paths left the representation box; values were
    extrapolated from the boundary cells."""
