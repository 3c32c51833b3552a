"""Exception types shared across the package."""


class RsfError(Exception):
    """Base class for package errors."""


class ParameterError(RsfError, ValueError):
    """A parameter is outside its valid range."""


class ShapeError(RsfError, ValueError):
    """Array dimensions are incompatible with the requested operation."""


class VolumeFormatError(RsfError, OSError):
    """A volume header or payload is malformed."""


class NumericalBlowupError(RsfError, FloatingPointError):
    """The level set produced a non-finite value."""

    def __init__(self, message, voxel=None, iteration=None):
        super().__init__(message)
        self.voxel = voxel
        self.iteration = iteration
