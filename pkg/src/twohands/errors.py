class TwoHandsError(Exception):
    """Base class for library errors."""


class ContractError(TwoHandsError, ValueError):
    """An operation was called with inputs violating its preconditions."""


class ValidationError(TwoHandsError, ValueError):
    """A data object fails one of its structural invariants."""


class ParseError(TwoHandsError, ValueError):
    """A file could not be parsed; the message names the offending field."""


class TopologyError(ValidationError):
    """A mesh is open or non-manifold."""


class AlignmentError(TwoHandsError, ValueError):
    """Procrustes alignment is undefined for a degenerate point configuration."""


class DivergenceError(TwoHandsError, RuntimeError):
    """An optimization produced a non-finite objective."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
