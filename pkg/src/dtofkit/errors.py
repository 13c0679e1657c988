"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: OSError -> 3, ValidationError -> 4,
NumericError -> 5.
"""


class DtofkitError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(DtofkitError):
    """Invalid argument, broken invariant or malformed input data."""


class FormatError(ValidationError):
    """File content does not match the documented schema."""


class BehindCameraError(ValidationError):
    """A 3D point with non-positive Z cannot be projected."""


class NumericError(DtofkitError):
    """A computation is undefined for the given data."""


class EmptyMaskError(NumericError):
    """No valid pixels remain after masking."""


class DegenerateFitError(NumericError):
    """The least-squares system has no unique solution."""
