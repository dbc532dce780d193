"""Exception taxonomy shared by every module.

Each class name doubles as the error name printed by the CLI, so the names
are part of the public contract and stay stable.
"""

from __future__ import annotations


class LatentForayError(Exception):
    """Base class for all domain errors raised by this package."""


class ShapeMismatch(LatentForayError):
    """Operation inputs have shapes that are invalid for the op."""

    def __init__(self, op_kind: str, shapes, detail: str = ""):
        self.op_kind = op_kind
        self.shapes = [tuple(s) for s in shapes]
        msg = f"{op_kind}: invalid input shapes {self.shapes}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonScalarLoss(LatentForayError):
    """backward() was called on a tensor that is not a scalar."""


class InvalidConfig(LatentForayError):
    """A configuration value violates its documented invariant."""


class InvalidLabel(LatentForayError):
    """A class label lies outside [0, class_count)."""


class InvalidDistribution(LatentForayError):
    """A probability vector is not a distribution (negative / not summing to 1)."""


class AlreadyMisclassified(LatentForayError):
    """Attack precondition failed: the clean image is not correctly classified."""


class TargetEqualsLabel(LatentForayError):
    """Targeted attack requested with the ground-truth class as target."""


class InversionLabelMismatch(LatentForayError):
    """The inverted image is not classified as the stated label."""


class BaselineTooWeak(LatentForayError):
    """Segmentation attack precondition failed: baseline pixel accuracy below threshold."""


class EmptyResult(LatentForayError):
    """An aggregation was asked for on an empty collection."""


class CorruptCheckpoint(LatentForayError):
    """Checkpoint container failed validation (magic, lengths, header)."""


class VersionUnsupported(LatentForayError):
    """Checkpoint container written by an unknown future format version."""


class IoError(LatentForayError):
    """Filesystem operation failed."""


class Divergence(LatentForayError):
    """Training produced non-finite losses."""


class UsageError(LatentForayError):
    """Command line was invoked incorrectly."""
