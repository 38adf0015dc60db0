"""Exception types shared across the toolkit.

Every error raised by the library is a subclass of :class:`MloodError`,
so callers (and the CLI) can catch one base type and report the concrete
class name as a machine-readable error code.
"""


class MloodError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(MloodError):
    pass


class NonFiniteValue(MloodError):
    pass


class IndexOutOfRange(MloodError):
    pass


class InvalidK(MloodError):
    pass


class PerturbationUnsupported(MloodError):
    pass


class MissingInput(MloodError):
    pass


class UnfittedDetector(MloodError):
    pass


class EmptyClass(MloodError):
    pass


class SingularCovariance(MloodError):
    pass


class DegenerateDensity(MloodError):
    pass


class InvalidConfig(MloodError):
    pass


class EmptyScores(MloodError):
    pass


class NonNegativityViolated(MloodError):
    pass


class TooFewRows(MloodError):
    pass


class EmptyValidation(MloodError):
    pass


class Divergence(MloodError):
    pass


class NoEvaluableLabels(MloodError):
    pass


class BadMagic(MloodError):
    pass


class UnsupportedVersion(MloodError):
    pass


class TruncatedPayload(MloodError):
    pass


class MalformedCsv(MloodError):
    pass


class MissingArtifact(MloodError):
    pass


class InvalidSpec(MloodError):
    pass
