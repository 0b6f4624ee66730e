"""Exception hierarchy.

Two families: :class:`ValidationError` for bad inputs or incompatible
choices (CLI exit code 2) and :class:`NumericalError` for failures that
happen while computing (CLI exit code 3).
"""


class BRIError(Exception):
    """Base class for all package errors."""


class ValidationError(BRIError, ValueError):
    pass


class NumericalError(BRIError, ArithmeticError):
    pass


# -- input validation -------------------------------------------------------

class LengthMismatch(ValidationError):
    pass


class NonBinaryAssignment(ValidationError):
    pass


class NonFiniteOutcome(ValidationError):
    pass


class EmptyGroup(ValidationError):
    pass


class DegenerateProbability(ValidationError):
    pass


class ConstantCovariate(ValidationError):
    pass


class SupportTooLarge(ValidationError):
    pass


class IncompatibleStatistic(ValidationError):
    pass


class DirectionViolation(ValidationError):
    pass


class UnsupportedModel(ValidationError):
    pass


class UnsupportedCombination(ValidationError):
    pass


class NonFiniteInit(ValidationError):
    pass


class NoSignChange(ValidationError):
    pass


class NonMonotone(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class MissingColumn(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class EmptyFile(ValidationError):
    pass


# -- numerical failures -----------------------------------------------------

class ZeroVariance(NumericalError):
    pass


class SingularDesign(NumericalError):
    pass


class SingularCovariance(NumericalError):
    pass


class QuadratureFailure(NumericalError):
    pass


class AllZeroDensity(NumericalError):
    pass


class StuckChain(NumericalError):
    pass
