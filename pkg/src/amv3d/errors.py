"""Exception and warning classes raised across the package."""


class AMVError(Exception):
    """Base class for all package errors."""


class NonMonotoneLevels(AMVError, ValueError):
    pass


class ShapeMismatch(AMVError, ValueError):
    pass


class NonPowerOfTwo(AMVError, ValueError):
    pass


class BadDepth(AMVError, ValueError):
    pass


class BadStage(AMVError, ValueError):
    pass


class NegativeLambda(AMVError, ValueError):
    pass


class NonPositiveRho(AMVError, ValueError):
    pass


class InvalidSpec(AMVError, ValueError):
    pass


class CoverageGap(AMVError, ValueError):
    pass


class ZeroDenominator(AMVError, ZeroDivisionError):
    pass


class OddLayerCount(AMVError, ValueError):
    pass


class NonFiniteObjective(AMVError, FloatingPointError):
    pass


class LineSearchFailure(AMVError, RuntimeError):
    pass


class DivergenceDetected(AMVError, RuntimeError):
    pass


class SingularFit(UserWarning):
    """Warned when a calibration system has no usable excitation."""
