"""Exception types shared across the package."""


class DegenerateImageError(ValueError):
    """Raised when an operation needs pixel variance and the image has none."""


class FormatError(ValueError):
    """Base class for binary container parsing failures."""


class BadMagicError(FormatError):
    """The leading magic bytes do not identify the expected container."""


class UnsupportedVersionError(FormatError):
    """The container version is newer than this implementation understands."""


class TruncatedError(FormatError):
    """The byte stream ended before the container was complete."""
