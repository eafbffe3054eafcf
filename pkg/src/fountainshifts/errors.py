"""Exception types shared across the package."""


class FountainError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(FountainError, ValueError):
    """An input violates a documented precondition."""


class DegenerateAmplitudeError(FountainError):
    """Pulse area makes the fringe-contrast denominator vanish."""


class DegenerateContrastError(FountainError):
    """Ramsey fringe amplitude too small to normalize a shift."""


class AccuracyNotReachedError(FountainError):
    """Requested tolerance not met; carries the best estimate obtained."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class NoAtomsError(FountainError):
    """No trajectories survived the aperture and detection weighting."""


class SlopeDegenerateError(FountainError):
    """Fitted slope consistent with zero; no crossing determinable."""


class VertexUndeterminedError(FountainError):
    """Fitted curvature consistent with zero; no vertex determinable."""


class InsufficientScanError(FountainError):
    """Amplitude scan does not span enough contrast maxima."""


class AmbiguousCalibrationError(FountainError):
    """Contrast maxima cannot be consistently associated with pulse orders."""


class InvalidRatioError(FountainError, ValueError):
    """Density ratio outside the extrapolation domain."""


class PhaseMapParseError(FountainError):
    """Malformed phase-map file; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
