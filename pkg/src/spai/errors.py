"""Exception types shared across the package."""


class SpaiError(Exception):
    """Base class for all package-specific failures."""


class InvalidInputError(SpaiError, ValueError):
    """An argument violates a documented precondition."""


class SymmetryViolationError(SpaiError):
    """An inverse transform produced a non-negligible imaginary part.

    Raised when a spectrum that should be conjugate-symmetric (and therefore
    invert to a real image) does not. Usually indicates a hand-built mask
    that breaks the pairing of mirrored frequency coefficients.
    """


class CheckpointError(SpaiError):
    """A checkpoint file exists but cannot be used (bad format, wrong shapes,
    corrupted payload, or mismatched backbone hash)."""


class InvalidDatasetError(SpaiError):
    """A dataset or manifest cannot support the requested operation
    (e.g. only one class present, too few images)."""


class UndefinedMetricError(SpaiError):
    """A metric has no defined value for the given inputs
    (e.g. AUC with a single class)."""
