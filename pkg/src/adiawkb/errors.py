"""Exception types shared across the package."""


class AdiawkbError(Exception):
    """Base class for all package errors."""


class IntegratorError(AdiawkbError):
    """ODE integration failed (step underflow or solver failure)."""

    def __init__(self, message, energy=None):
        super().__init__(message if energy is None else f"{message} (at E={energy})")
        self.energy = energy


class BranchPointError(AdiawkbError):
    """Evaluation requested at or too close to a branch point."""

    def __init__(self, message, location=None, distance=None):
        super().__init__(message)
        self.location = location
        self.distance = distance


class ClearanceError(AdiawkbError):
    """A path or curve violates the configured branch-point clearance."""

    def __init__(self, message, location=None, distance=None, nearest=None):
        super().__init__(message)
        self.location = location
        self.distance = distance
        self.nearest = nearest


class PoleError(AdiawkbError):
    """Evaluation at a pole of the normalized Bloch solution."""

    def __init__(self, message, gap_index=None):
        super().__init__(message)
        self.gap_index = gap_index


class NearPoleError(AdiawkbError):
    """Denominator below tolerance near a point of P or Q."""


class ScenarioError(AdiawkbError):
    """A scenario file is invalid or violates a stated precondition."""


class PreconditionError(AdiawkbError):
    """A continuation-rule or operation precondition failed."""

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}


class GeometryError(AdiawkbError):
    """A geometric construction could not be completed as requested."""
