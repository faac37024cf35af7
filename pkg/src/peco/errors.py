"""Exception and warning types shared across the package."""


class PecoError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PecoError):
    """Invalid user configuration (bad file, bad flag combination)."""


# uncertainty data

class EmptyData(PecoError):
    pass


class DimensionError(PecoError, ValueError):
    pass


# analytic densities

class NotNormalized(PecoError):
    pass


class DegenerateDensity(PecoError):
    pass


# expression language

class DslSyntaxError(PecoError):
    """Parse failure with a 1-based source position and the expected tokens."""

    def __init__(self, message, line, column, expected=()):
        self.line = line
        self.column = column
        self.expected = tuple(sorted(set(expected)))
        detail = f"{message} at line {line}, column {column}"
        if self.expected:
            detail += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(detail)


class UnknownIdentifier(DslSyntaxError):
    pass


class IndexOutOfRange(DslSyntaxError):
    pass


class DomainError(PecoError, ArithmeticError):
    def __init__(self, message, subexpression=None):
        self.subexpression = subexpression
        if subexpression is not None:
            message = f"{message} in '{subexpression}'"
        super().__init__(message)


class DivideByZero(DomainError):
    pass


class NonDifferentiable(DomainError):
    pass


# solver

class Infeasible(PecoError):
    pass


class MaxIterations(PecoError):
    pass


class GridOracleDimension(PecoError):
    pass


class SolveFailure(PecoError):
    def __init__(self, message, subset=None):
        self.subset = subset
        super().__init__(message)


class FingerprintMismatch(PecoError):
    pass


# families and sample size

class FamilyEmpty(PecoError):
    pass


class FamilyTooLarge(PecoError):
    pass


class AssumptionViolated(PecoError):
    pass


class NoFeasibleZ(PecoError):
    pass


class ZTooLarge(PecoError):
    pass


# pipeline and history store

class StageError(PecoError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


class EmptyProbableSet(PecoError):
    pass


class ExactModeTooLarge(PecoError):
    pass


class InsufficientHistory(PecoError):
    pass


class MixedFamilySizes(PecoError):
    pass


class CorruptRecord(PecoError):
    def __init__(self, line_numbers):
        self.line_numbers = list(line_numbers)
        super().__init__(f"corrupt store records at lines {self.line_numbers}")


# warnings

class ProbeTooCoarse(UserWarning):
    pass


class NonMonotoneRho(UserWarning):
    pass


class CorruptRecordWarning(UserWarning):
    pass
