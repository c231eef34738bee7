"""Exception types shared across the package."""


class TppatError(Exception):
    """Base class for all package errors."""


class ValidationError(TppatError):
    """Invalid user input: bad config values, dimension mismatches, bad arguments."""


class MeshFormatError(ValidationError):
    """Malformed mesh or field file. Carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SolverError(TppatError):
    """A linear or nonlinear solve failed to converge. Carries diagnostics."""

    def __init__(self, message, residual=None, report=None):
        super().__init__(message)
        self.residual = residual
        self.report = report
