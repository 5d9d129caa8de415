class InvalidArgumentError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class FormatError(ValueError):
    """Raised when a file does not match its expected on-disk format.

    The message carries the offending path and, where known, the line or
    JSON location.
    """


class DetectorError(RuntimeError):
    """A detector pass failed; ``pass_name`` names which one ("coarse", "fine[q]")."""

    def __init__(self, pass_name: str, cause: BaseException):
        super().__init__(f"detector failed on {pass_name} pass: {cause}")
        self.pass_name = pass_name
        self.cause = cause
