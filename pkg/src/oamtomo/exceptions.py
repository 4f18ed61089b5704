"""Exception hierarchy shared by every module."""


class OamError(Exception):
    """Base class for all errors raised by oamtomo."""


class InvalidArgument(OamError, ValueError):
    pass


class PreconditionViolation(OamError, ValueError):
    pass


class CapacityError(OamError):
    """A construction would leave its declared (or declarable) mode space."""


class ResolutionError(OamError):
    """The sampling grid cannot resolve the requested fields."""

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class TruncationError(OamError):
    """The Fourier-domain weight overflows before the integrand has decayed."""

    def __init__(self, message, safe_radius=None):
        super().__init__(message)
        self.safe_radius = safe_radius
