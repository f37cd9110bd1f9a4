"""Exception hierarchy shared by every fracap module."""


class FracapError(Exception):
    """Base class for all toolkit errors."""


class InvalidHurst(FracapError, ValueError):
    pass


class CirculantNotPSD(FracapError):
    """A circulant eigenvalue is negative beyond the clamping tolerance."""


class TauOffGrid(FracapError, ValueError):
    pass


class ShiftOutOfRange(FracapError, ValueError):
    pass


class WindowOffGrid(FracapError, ValueError):
    pass


class QuadratureDiverged(FracapError, ArithmeticError):
    pass


class NoDecayHint(FracapError, ValueError):
    pass


class StepDiverged(FracapError, ArithmeticError):
    pass


class ContractionViolated(FracapError):
    """The contraction ratio c_S * c_b / m_S is not below one."""


class AssumptionViolated(FracapError):
    """A probe-based check of the model structural assumptions failed."""


class HorizonExceedsGrid(FracapError, ValueError):
    pass


class EmptyOverlap(FracapError, ValueError):
    pass


class DimensionUnsupported(FracapError, ValueError):
    pass


class KernelMismatch(FracapError, ValueError):
    pass


class DegenerateVT(FracapError, ArithmeticError):
    pass


class ConfigInvalid(FracapError, ValueError):
    """Configuration failed validation; ``field_errors`` maps field to message."""

    def __init__(self, field_errors):
        self.field_errors = dict(field_errors)
        lines = [f"{k}: {v}" for k, v in sorted(self.field_errors.items())]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))
