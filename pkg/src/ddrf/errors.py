"""Exception hierarchy shared across the package."""


class DDRFError(Exception):
    """Base class for all errors raised by ddrf."""

    kind = "error"


class InvalidInputError(DDRFError, ValueError):
    kind = "invalid-input"


class DimensionError(DDRFError, ValueError):
    kind = "dimension"


class StateError(DDRFError, RuntimeError):
    kind = "state"


class ParseError(DDRFError, ValueError):
    kind = "parse"


class ConfigError(DDRFError, ValueError):
    kind = "config"


class TrainingDivergedError(DDRFError, FloatingPointError):
    """Raised when the training loss becomes non-finite.

    ``snapshot`` holds the schedule state and last finite log record at the
    time of failure.
    """

    kind = "diverged"

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
