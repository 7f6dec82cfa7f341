"""Exception types shared across the library.

UserInputError subclasses map to CLI exit code 2, everything else to 1.
"""


class PconvError(Exception):
    """Base class for all library errors."""


class ShapeError(PconvError):
    """Tensor dimensions are inconsistent with an operation's contract."""

    def __init__(self, message, expected=None, got=None):
        if expected is not None or got is not None:
            message = f"{message} (expected {expected}, got {got})"
        super().__init__(message)
        self.expected = expected
        self.got = got


class ContractError(PconvError):
    """An input violates a documented invariant (e.g. non-binary mask)."""


class ConfigError(PconvError):
    """Network or training configuration is inconsistent."""


class DivergenceError(PconvError):
    """Training produced a non-finite loss or gradient."""


class GenerationExhaustedError(PconvError):
    """Mask rejection sampling could not fill a benchmark cell."""


class UserInputError(PconvError):
    """Bad user-supplied files or arguments (CLI exit code 2)."""
