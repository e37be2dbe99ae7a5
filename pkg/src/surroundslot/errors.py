"""Exception hierarchy shared across the package."""


class SurroundSlotError(Exception):
    """Base class for all errors raised by this package."""


class InvalidCamera(SurroundSlotError, ValueError):
    pass


class DegenerateView(SurroundSlotError):
    """Ground homography is singular for the given camera pose."""


class AtInfinity(SurroundSlotError):
    """A homography maps the point onto the line at infinity."""


class SizeMismatch(SurroundSlotError, ValueError):
    pass


class NonConvex(SurroundSlotError, ValueError):
    pass


class DegenerateArea(SurroundSlotError, ValueError):
    pass


class NonSmoothConfiguration(SurroundSlotError):
    """IoU is not differentiable at this configuration (vertex on an edge)."""


class DoesNotFit(SurroundSlotError, ValueError):
    pass


class FormatError(SurroundSlotError, ValueError):
    """Malformed input file; message carries a file/field/line diagnostic."""
