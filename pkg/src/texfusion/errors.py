"""Exception types raised across the package."""


class TexfusionError(Exception):
    """Base class for all package errors."""


class BehindCameraError(TexfusionError, ValueError):
    pass


class InvalidDepthError(TexfusionError, ValueError):
    pass


class NoNormalError(TexfusionError, ValueError):
    """Surface normal cannot be estimated from the depth neighbourhood."""


class DimensionMismatchError(TexfusionError, ValueError):
    pass


class OutOfVolumeError(TexfusionError, ValueError):
    pass


class FormatError(TexfusionError, ValueError):
    """Malformed or unsupported file content."""
