"""Exception types shared across the toolkit."""


class LupiMarginError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(LupiMarginError):
    """Array shapes are inconsistent with each other or with a fitted model."""


class DegenerateLabels(LupiMarginError):
    """A training set contains fewer than two distinct labels."""


class SolverFailure(LupiMarginError):
    """The quadratic program could not be solved to the requested tolerance."""


class Infeasible(SolverFailure):
    """The constraint set of a quadratic program is empty."""


class NotPSD(SolverFailure):
    """The quadratic term fails the positive-semidefinite tolerance."""


class MaxIterations(SolverFailure):
    """Iteration budget exhausted; the best iterate is attached as ``solution``."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class MissingSource(LupiMarginError):
    """An adaptive model or trainer was used without a source model."""


class NoPositives(LupiMarginError):
    """Average precision is undefined without at least one positive label."""


class LengthMismatch(LupiMarginError):
    """Two sequences that must align have different lengths."""


class Empty(LupiMarginError):
    """An operation that needs at least one value received none."""


class DegenerateVariance(LupiMarginError):
    """A two-sample z-test needs a nonzero standard error on at least one side."""


class TooFewSamples(LupiMarginError):
    """Not enough samples per class for the requested split or fold count."""


class ParseError(LupiMarginError):
    """A data or model file could not be parsed; carries the offending line."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class RowCountMismatch(LupiMarginError):
    """Companion files (features / privileged / labels / domains) disagree on row count."""


class BadLabel(LupiMarginError):
    """A label value outside {-1, +1} was encountered."""


class VersionMismatch(LupiMarginError):
    """A model file declares an unsupported format version."""


class EmptyPool(LupiMarginError):
    """A prediction pool required by ratio-preserving pooling is empty."""


class ConfigMismatch(LupiMarginError):
    """A protocol configuration is inconsistent with the supplied data."""


class EmptyTestSet(LupiMarginError):
    """An evaluation split ended up with zero rows."""
