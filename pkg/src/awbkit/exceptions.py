"""Exception types shared across the package.

The CLI maps these onto exit codes: anything raised while validating
user-supplied inputs (arguments, config files, manifests, model files)
exits with code 2, failures during a run exit with code 3.
"""


class AwbError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(AwbError, ValueError):
    """A caller passed an argument outside the documented domain."""


class InvalidStateError(AwbError, RuntimeError):
    """An operation was invoked on an object in the wrong state."""


class NumericDomainError(AwbError, ArithmeticError):
    """A numeric op received input outside its domain (reports the op name)."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"numeric domain violation in op '{op}'"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ManifestError(AwbError, ValueError):
    """Dataset manifest is missing, malformed, or inconsistent."""


class ImageFormatError(AwbError, ValueError):
    """An image file has an unsupported format, depth, or corrupt payload."""


class CheckpointError(AwbError, ValueError):
    """Base for model checkpoint problems."""


class CheckpointFormatError(CheckpointError):
    """Bad magic or malformed header."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class CheckpointCorruptError(CheckpointError):
    """Checkpoint payload is truncated or does not match its header."""


class SingularMatrixError(AwbError, RuntimeError):
    """A mapping matrix stayed numerically singular after all jitter retries."""

    def __init__(self, detail: str = ""):
        super().__init__(detail or "mapping matrix is singular after jitter retries")


class TrainingAbort(AwbError, RuntimeError):
    """Training hit a non-recoverable condition (e.g. non-finite loss)."""
