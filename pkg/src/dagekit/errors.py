"""Exception hierarchy.

Every error raised by the package derives from :class:`DageError`.  The
intermediate classes group errors by the CLI exit code they map to.
"""


class DageError(Exception):
    """Base class for all package errors."""


class DataError(DageError):
    """Problems with input data (CLI exit code 3)."""


class MissingFile(DataError):
    pass


class MalformedHeader(DataError):
    pass


class RaggedRow(DataError):
    def __init__(self, line, expected, got):
        self.line = line
        self.expected = expected
        self.got = got
        super().__init__(f"line {line}: expected {expected} fields, got {got}")


class NonFiniteValue(DataError):
    pass


class UnknownDomainTag(DataError):
    pass


class InvalidLabel(DataError):
    pass


class GraphError(DageError):
    """Invalid graph construction inputs."""


class NegativeWeight(GraphError):
    pass


class NonZeroDiagonal(GraphError):
    pass


class NonPositiveMargin(GraphError):
    pass


class NonPositiveSigma(GraphError):
    pass


class KTooLarge(GraphError):
    pass


class MissingSameClassSource(GraphError):
    def __init__(self, target):
        self.target = target
        super().__init__(f"target column {target} has no same-class source in batch")


class MissingDifferentClassSource(GraphError):
    def __init__(self, target):
        self.target = target
        super().__init__(f"target column {target} has no different-class source in batch")


class SolverError(DageError):
    pass


class DimensionMismatch(SolverError):
    pass


class SingularNumerator(SolverError):
    pass


class DimensionTooLarge(SolverError):
    pass


class NumericError(DageError):
    """Numerical failures (CLI exit code 4)."""


class DegenerateDenominator(NumericError):
    pass


class NonFiniteProbe(NumericError):
    pass


class NonFiniteLoss(NumericError):
    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")


class TrainingError(DageError):
    pass


class EmptyPairSet(TrainingError):
    pass


class MissingClass(TrainingError):
    pass


class ProtocolError(DataError):
    """Split/pairing requests the data cannot satisfy."""


class ClassTooSmall(ProtocolError):
    pass


class InsufficientPool(ProtocolError):
    pass


class InsufficientSource(ProtocolError):
    pass


class NoSameClassPairs(ProtocolError):
    pass


class ConfigError(DageError):
    """Invalid experiment configuration (CLI exit code 2)."""
