"""Exception hierarchy shared by every module."""


class CenError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(CenError, ValueError):
    """Shape mismatch, non-finite value, or out-of-range argument."""


class DivergedTrainingError(CenError, RuntimeError):
    """A loss evaluated to NaN/Inf.

    ``state`` holds a copy of the last parameter set for which the loss was
    finite (may be ``None`` if divergence happened on the first step).
    """

    def __init__(self, message, state=None, diagnostics=None):
        super().__init__(message)
        self.state = state
        self.diagnostics = diagnostics or {}


class UndefinedMetricError(CenError, ValueError):
    """A metric cannot be computed on the given data (e.g. AUC with one class)."""


class SingularFitError(CenError, ArithmeticError):
    """Normal equations of an unregularised least-squares fit are singular."""


class IngestionError(CenError, ValueError):
    """Malformed tabular input. ``row`` is the 0-based data row index, if known."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class UnimplementedFeatureError(CenError, NotImplementedError):
    """The requested combination of options is deliberately not supported."""
