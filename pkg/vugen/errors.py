"""
vugen/errors.py

Exception hierarchy shared by every stage of the pipeline.

The CLI catches ``VugenError`` and turns it into a nonzero exit status with
the message printed, so messages should name the offending field, path,
step or hash.
"""

from __future__ import annotations

from typing import Optional


class VugenError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(VugenError, ValueError):
    """Invalid argument or spec. ``field`` names what was violated."""

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field}: {message}")


class ShapeError(VugenError, ValueError):
    """Tensor shapes do not line up."""


class EncoderStateError(VugenError):
    """The understanding encoder is used before it was frozen."""


class TrainingError(VugenError):
    """A training loss became non-finite."""

    def __init__(self, message: str, step: Optional[int] = None) -> None:
        self.step = step
        if step is not None:
            message = f"{message} (step/batch {step})"
        super().__init__(message)


class StageMismatchError(VugenError):
    """An upstream artifact hash does not match what was recorded."""


class DependencyError(VugenError):
    """A required upstream artifact is missing."""


class NumericalError(VugenError):
    """A numerical routine could not produce the requested result."""

    def __init__(self, message: str, achieved_rank: Optional[int] = None) -> None:
        self.achieved_rank = achieved_rank
        super().__init__(message)


class ConfigError(VugenError):
    """Run config failed strict schema validation."""


class ArtifactIOError(VugenError, OSError):
    """Reading or writing an artifact failed."""

    def __init__(self, path: str, message: str) -> None:
        self.path = path
        super().__init__(f"{path}: {message}")
