"""Exception types shared across the package."""


class CoordSimError(Exception):
    """Base class for all coordsim errors."""


class NotHermitian(CoordSimError):
    """Matrix fails the Hermiticity check."""


class NotUnitTrace(CoordSimError):
    """Matrix trace is not 1 within tolerance."""


class NotPSD(CoordSimError):
    """Matrix has an eigenvalue below the PSD tolerance."""


class DimensionCap(CoordSimError):
    """A requested construction exceeds the configured dimension cap."""


class BadCut(CoordSimError):
    """Register cut inconsistent with the operator's labels."""


class DimMismatch(CoordSimError):
    """Two operators have incompatible dimensions."""


class TopologyMismatch(CoordSimError):
    """State/extension topology does not match the requested operation."""


class ShapeOverflow(CoordSimError):
    """Codebook shape exceeds the configured cap."""


class LengthMismatch(CoordSimError):
    """Classical sequence length does not match the blocklength."""


class InfeasibleExtension(CoordSimError):
    """Extension does not reproduce the target marginal within tolerance."""


class BudgetExceeded(CoordSimError):
    """Exhaustive scan ran out of budget; carries the best value found so far."""

    def __init__(self, message, best_value=None):
        super().__init__(message)
        self.best_value = best_value


class ParseError(CoordSimError):
    """Experiment config text could not be parsed."""


class ValidationError(CoordSimError):
    """Experiment config parsed but failed validation."""

    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason
