"""Exception types shared across the package."""


class TeaShiftError(Exception):
    """Base class for all library errors."""


class ValidationError(TeaShiftError):
    """A value, spec, or config field violates its contract."""


class ShapeMismatchError(TeaShiftError):
    """Declared shapes disagree with actual payload sizes."""


class NonFiniteDataError(TeaShiftError):
    """Samples contain NaN or infinity."""
