"""Exception types shared across the package."""


class DynfuseError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatchError(DynfuseError, ValueError):
    """Operand shapes are inconsistent. Always names both offending shapes."""

    def __init__(self, op: str, expected, actual):
        self.op = op
        self.expected = expected
        self.actual = actual
        super().__init__(f"{op}: expected {expected}, got {actual}")


class NonFiniteError(DynfuseError, FloatingPointError):
    """A value that must be finite is NaN or infinite."""


class DivergenceError(DynfuseError, RuntimeError):
    """Training produced a non-finite loss or gradient."""


class ConfigError(DynfuseError, ValueError):
    """Invalid, unknown, or missing configuration key."""


class DataFormatError(DynfuseError, ValueError):
    """Malformed dataset file; message carries the file and line number."""


class CheckpointError(DynfuseError, ValueError):
    """Corrupt or inconsistent checkpoint container."""


class ModeMismatchError(CheckpointError):
    """Checkpoint was written under a different fusion mode than requested."""
