"""Shared exception types.

Every failure mode surfaced by the library maps to one of these classes so
callers (and the CLI) can translate them into exit codes without string
matching.
"""


class DdepError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(DdepError, ValueError):
    """A caller-supplied value violates an operation's precondition."""


class InvalidDataError(DdepError, ValueError):
    """Data content is malformed (bad mask values, degenerate statistics)."""


class ContractViolationError(DdepError, RuntimeError):
    """An internal contract was broken (missing gradient, bad stage wiring)."""


class ConfigError(DdepError, ValueError):
    """Configuration text is invalid; `key` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ConfigMismatchError(DdepError, ValueError):
    """A checkpoint's embedded config is incompatible with the requested one.

    `fields` lists the differing field names.
    """

    def __init__(self, fields):
        super().__init__("checkpoint config mismatch: " + ", ".join(fields))
        self.fields = tuple(fields)


class CheckpointError(DdepError, RuntimeError):
    """Base class for checkpoint file problems."""


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class TensorShapeError(CheckpointError):
    """Stored tensor shapes disagree with the embedded model config."""


class UndefinedMetricError(DdepError, ValueError):
    """Requested metric is undefined (e.g. mIoU with no scored pixels)."""


class TrainingDivergedError(DdepError, RuntimeError):
    """A non-finite loss was produced during training."""


class GradCheckError(DdepError, RuntimeError):
    """The gradient checker could not run (e.g. non-deterministic loss)."""
