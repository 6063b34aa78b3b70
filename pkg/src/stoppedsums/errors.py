"""Exception hierarchy.

The CLI maps these onto exit codes: precondition failures exit with 2,
numeric-range failures with 4. Verdict failures are not exceptions; they are
carried in reports.
"""


class StoppedSumsError(Exception):
    """Base class for all library errors."""


class PreconditionError(StoppedSumsError, ValueError):
    """An input violates a hypothesis the computation relies on."""


class ClassificationError(PreconditionError):
    """Heavy/light classification was requested for a lattice-only law."""


class UnsupportedFamilyError(PreconditionError):
    """The requested operation is not defined for this distribution family."""


class NumericRangeError(StoppedSumsError, ArithmeticError):
    """A quantity could not be computed within floating-point range."""


class TruncatedRegionError(NumericRangeError):
    """A lattice was queried beyond its truncation point."""


class DivergentNormalizerError(NumericRangeError):
    """A tilting normalizer sum does not converge."""

    def __init__(self, message: str, failing_index: int | None = None):
        super().__init__(message)
        self.failing_index = failing_index
