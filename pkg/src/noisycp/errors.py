"""Exception types raised across the toolkit.

Every error derives from :class:`NoisyCPError`, which itself is a
``ValueError`` so callers that only care about "bad input" can catch that.
"""

from __future__ import annotations


class NoisyCPError(ValueError):
    """Base class for all toolkit errors."""


# contamination
class NonPositiveFrequency(NoisyCPError):
    pass


class EpsilonOutOfRange(NoisyCPError):
    pass


class OddK(NoisyCPError):
    pass


class NuOutOfRange(NoisyCPError):
    pass


class NotColumnStochastic(NoisyCPError):
    pass


class SingularM(NoisyCPError):
    pass


class LabelOutOfRange(NoisyCPError):
    pass


# scores
class DimensionMismatch(NoisyCPError):
    pass


# calibration
class EmptyLabelClass(NoisyCPError):
    def __init__(self, label: int, message: str | None = None):
        self.label = label
        super().__init__(message or f"no calibration points with noisy label {label}")


class EmptyCalibration(NoisyCPError):
    pass


class RegionInvariantViolation(NoisyCPError):
    pass


class GammaOutOfRange(NoisyCPError):
    pass


class MissingDensityBounds(NoisyCPError):
    pass


# estimation
class SingularQtilde(NoisyCPError):
    pass


class EmptyCleanClass(NoisyCPError):
    def __init__(self, label: int):
        self.label = label
        super().__init__(f"no clean samples with true label {label}")


class ClassifierAtChance(NoisyCPError):
    pass


class DegenerateDenominator(NoisyCPError):
    pass


# synth
class BadDimensions(NoisyCPError):
    pass


class EmptyTrainingSet(NoisyCPError):
    pass


# harness
class EmptyTestSet(NoisyCPError):
    pass


class SchemaMismatch(NoisyCPError):
    pass


class BadLabel(NoisyCPError):
    pass


class NonNormalizedRow(NoisyCPError):
    def __init__(self, line: int, total: float):
        self.line = line
        self.total = total
        super().__init__(
            f"line {line}: probabilities sum to {total:.8g}, expected 1 "
            "(pass --renormalize to rescale)"
        )


class ConfigError(NoisyCPError):
    """Malformed experiment configuration (unknown key, bad value)."""
