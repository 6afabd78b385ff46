"""Exception types raised across the package."""


class HcthmmError(Exception):
    """Base class for all package errors."""


class BlockShapeError(HcthmmError, ValueError):
    """A parameter block has the wrong dimension for the given (M, q)."""

    def __init__(self, block: str, expected: int, got: int):
        self.block = block
        self.expected = expected
        self.got = got
        super().__init__(
            f"parameter block '{block}' has length {got}, expected {expected}"
        )


class NotInvertibleError(HcthmmError, ValueError):
    """Natural parameters sit on the boundary; no unconstrained preimage."""


class RateMatrixError(HcthmmError, ValueError):
    """A matrix is not a valid transition-rate (generator) matrix."""


class ReducibleChainError(HcthmmError, ValueError):
    """Generator has more than one communicating class; no unique stationary law."""


class GroupAssignmentError(HcthmmError, ValueError):
    """Subject/group bookkeeping is inconsistent (unknown or empty group)."""


class EmissionUnderflowError(HcthmmError, RuntimeError):
    """Every state's emission probability underflowed to zero at one time point.

    Signals a degenerate parameter value (e.g. a Poisson mean astronomically
    far from the observed count).
    """

    def __init__(self, time_index: int, subject_id=None):
        self.time_index = time_index
        self.subject_id = subject_id
        where = f" for subject {subject_id!r}" if subject_id is not None else ""
        super().__init__(
            f"emission probabilities underflowed to zero in every state at "
            f"time index {time_index}{where}"
        )


class InnerSolverError(HcthmmError, RuntimeError):
    """Per-subject optimization failed after retries."""

    def __init__(self, subject_id, message: str):
        self.subject_id = subject_id
        super().__init__(f"inner solver failed for subject {subject_id!r}: {message}")


class CsvFormatError(HcthmmError, ValueError):
    """Malformed input CSV; carries the offending line numbers."""

    def __init__(self, message: str, lines=()):
        self.lines = tuple(lines)
        if self.lines:
            message = f"{message} (line{'s' if len(self.lines) > 1 else ''} {', '.join(map(str, self.lines))})"
        super().__init__(message)


class ConfigError(HcthmmError, ValueError):
    """Configuration file failed schema validation; carries a field path."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"config field '{field_path}': {message}")
