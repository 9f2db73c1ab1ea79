"""Exception hierarchy shared by every module.

Each error carries the offending names or values in ``args`` so the CLI can
report them verbatim.
"""


class HierSearchError(Exception):
    """Base class for all library errors."""


class ValidationError(HierSearchError, ValueError):
    """Input violates a documented precondition."""


# taxonomy
class TaxonomyError(ValidationError):
    """Malformed taxonomy source."""

    def __init__(self, message, nodes=(), line=None):
        self.nodes = tuple(nodes)
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyInput(TaxonomyError):
    pass


class CycleDetected(TaxonomyError):
    pass


class MultipleRoots(TaxonomyError):
    pass


class MultipleParents(TaxonomyError):
    pass


class DuplicateName(TaxonomyError):
    pass


class OrphanNode(TaxonomyError):
    pass


class InvalidLevelOrder(TaxonomyError):
    pass


class UnknownNode(ValidationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DegenerateTree(ValidationError):
    pass


class LevelNotOnPath(ValidationError):
    pass


# linear algebra / shapes
class DimensionMismatch(ValidationError):
    pass


class NotPSD(ValidationError):
    def __init__(self, min_eigenvalue):
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(
            f"similarity matrix is not positive semidefinite "
            f"(most negative eigenvalue {self.min_eigenvalue:.3e})"
        )


class NotSymmetric(ValidationError):
    pass


class BadDiagonal(ValidationError):
    pass


class NotUnitNorm(ValidationError):
    pass


class NonFiniteInput(ValidationError):
    pass


# learner
class EmptyBatch(ValidationError):
    pass


class NoData(ValidationError):
    pass


class UnknownClassIndex(ValidationError):
    pass


class OutOfRangeEpoch(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


# retrieval
class DuplicateId(ValidationError):
    pass


class EmptyIndex(ValidationError):
    pass


class EmptyFeatureSet(ValidationError):
    pass


class MissingQueryDescriptor(ValidationError):
    pass


class WindowTooLarge(ValidationError):
    pass


# evaluation
class KOutOfRange(ValidationError):
    pass


class ZeroDenominator(ValidationError):
    pass


class NoRelevantItems(ValidationError):
    pass


class EmptyPredictions(ValidationError):
    pass


class BadSigma(ValidationError):
    pass


class FormatError(HierSearchError):
    """On-disk artifact does not match its declared format."""
