"""Exception types shared across the package."""


class ShapetexError(Exception):
    """Base class for all package errors."""


class ImageReadError(ShapetexError):
    """File missing, truncated, or not parseable as an image."""


class UnsupportedImageError(ShapetexError):
    """Image exists but uses a bit depth or mode we do not handle."""


class EmptyImageError(ShapetexError):
    """Zero-sized image."""


class ParameterError(ShapetexError, ValueError):
    """Invalid argument value (also catchable as ValueError)."""


class InsufficientSamplesError(ParameterError):
    """Too few samples for the requested codebook or mixture size."""


class DatasetError(ShapetexError):
    """Dataset directory missing, empty, or malformed."""


class CacheIntegrityError(ShapetexError):
    """Cached artifact failed its checksum."""
