"""Exception taxonomy shared across the package.

Three branches matter to the CLI: validation problems (bad arguments,
malformed inputs, inconsistent shapes) exit with 2, file problems exit
with 3, and non-finite numerics exit with 4.
"""


class SplatError(Exception):
    """Base class for everything this package raises on purpose."""


class ValidationError(SplatError):
    """Inputs violate a documented precondition."""


class ShapeMismatch(ValidationError):
    pass


class DimsMismatch(ValidationError):
    """A file's recorded dimensions disagree with the scene manifest."""


class NonPositiveDepth(ValidationError):
    """Point at or behind the camera plane where positive depth is required."""


class BehindCamera(ValidationError):
    """Gaussian center behind the near clip; culled by the rasterizer."""


class TooFewViews(ValidationError):
    pass


class InvalidRange(ValidationError):
    pass


class DuplicateName(ValidationError):
    pass


class TooSmall(ValidationError):
    """Image smaller than the structural-similarity window."""


class IOFailure(SplatError):
    """File level problem: missing, unreadable, or corrupt."""


class MissingFile(IOFailure):
    pass


class CorruptFile(IOFailure):
    pass


class NumericalFailure(SplatError):
    """NaN or infinity detected in a stage output."""
