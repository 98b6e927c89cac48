"""Exception types raised across the pipeline."""


class Lumen2HEError(Exception):
    """Base class for all package errors."""


class NotFound(Lumen2HEError, FileNotFoundError):
    pass


class UnsupportedFormat(Lumen2HEError, ValueError):
    pass


class InvalidInput(Lumen2HEError, ValueError):
    pass


class InvalidConfig(Lumen2HEError, ValueError):
    pass


class ConfigError(Lumen2HEError, ValueError):
    pass


class IoError(Lumen2HEError, OSError):
    pass


class CheckpointError(Lumen2HEError):
    pass


class VersionError(CheckpointError):
    pass


class DivergenceError(Lumen2HEError, FloatingPointError):
    """A loss term became NaN or infinite during training."""

    def __init__(self, term: str, value: float, step: int | None = None):
        self.term = term
        self.value = value
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"loss term {term!r} is non-finite ({value}){where}")


class LockError(Lumen2HEError):
    pass
