class PreflectError(Exception):
    """Base class; `stage` is filled in by the pipeline driver."""

    stage = None


class ValidationError(PreflectError):
    pass


class NumericalError(PreflectError):
    pass


# curve_core
class SelfIntersection(ValidationError):
    pass


class DegenerateEdge(ValidationError):
    pass


class TooFewVertices(ValidationError):
    pass


class PointNotOnCurve(ValidationError):
    pass


class DegenerateArc(ValidationError):
    pass


class TooFewSamples(ValidationError):
    pass


# conformal
class ConvergenceFailure(NumericalError):
    pass


class BasePointUndefined(ValidationError):
    pass


class OutsideDomain(ValidationError):
    pass


class NonFinite(NumericalError):
    pass


# metrics
class BadAlpha(ValidationError):
    pass


class DisconnectedGraph(NumericalError):
    pass


# whitney
class BadLevel(ValidationError):
    pass


class TouchesBoundary(ValidationError):
    pass


# reflect
class OutsideCollar(ValidationError):
    pass


class RootBracketFailure(NumericalError):
    pass


# refine
class EmptyShadow(ValidationError):
    pass


# edges
class MalformedRect(ValidationError):
    pass


class BadExponent(ValidationError):
    pass


class MissingNeighborPartition(NumericalError):
    pass


class CountMismatch(NumericalError):
    pass


class DegenerateRect(ValidationError):
    pass


class BadEpsilon(ValidationError):
    pass


class MarkedPointConflict(NumericalError):
    pass


# tukia_assembly
class MarkMismatch(NumericalError):
    pass


class NonMonotoneBoundary(NumericalError):
    pass


class GlueViolation(NumericalError):
    pass


# verify_cli
class TooCoarse(ValidationError):
    pass


class IOFailure(PreflectError):
    pass


class SubhyperbolicityWarning(UserWarning):
    pass


class ConformalAccuracyWarning(UserWarning):
    pass
