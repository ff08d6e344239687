"""Exception hierarchy shared across the package.

Every error raised on purpose derives from HeadgenError so callers can
catch the whole family without swallowing bugs.
"""


class HeadgenError(Exception):
    """Base class for all deliberate errors."""


class ConfigurationError(HeadgenError):
    """A config value is unusable (bad dimensions, missing artifact, ...)."""


class DomainError(HeadgenError):
    """An argument is outside the documented domain of an operation."""


class InvariantViolationError(HeadgenError):
    """A structural invariant of an input object does not hold."""


class GeometryError(HeadgenError):
    """Mesh-level failure (e.g. only degenerate faces)."""


class AlignmentError(HeadgenError):
    """Face-crop alignment cannot be computed from the given anchors."""


class CaptionError(HeadgenError):
    """Text is not produced by the caption grammar."""


class TokenizationError(CaptionError):
    """A token is outside the grammar vocabulary."""


class EmptyFaceError(HeadgenError):
    """A face mask selects no pixels."""


class CheckpointError(HeadgenError):
    """Checkpoint file is unreadable, tampered, or has the wrong role/version."""


class DependencyError(HeadgenError):
    """A pipeline stage was invoked before its prerequisites exist."""


class TrainingError(HeadgenError):
    """Training aborted (non-finite loss, frozen-weight mutation, ...)."""
