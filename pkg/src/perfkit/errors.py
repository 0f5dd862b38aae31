"""Exception hierarchy shared across the toolkit."""


class PerfkitError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(PerfkitError):
    """Invalid parameters, inconsistent inputs, violated invariants."""


class FormatError(PerfkitError):
    """Malformed on-disk data: bad magic, truncation, corrupt payloads."""


class DegenerateSignalError(ValidationError):
    """A signal is too flat/empty for the requested operation."""


class TrainingError(PerfkitError):
    """Training aborted (divergence, empty splits)."""
