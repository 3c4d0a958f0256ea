"""Exception hierarchy; the CLI maps each class to an exit code."""


class AlignflowError(Exception):
    exit_code = 2


class ConfigError(AlignflowError, ValueError):
    exit_code = 1


class NumericalError(AlignflowError, ArithmeticError):
    exit_code = 2


class StepSizeError(NumericalError):
    """Time step outside the stability guard."""


class SchemeFailure(NumericalError):
    """NaN or a negative density cell produced by a solver step."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SupportTooLarge(AlignflowError, ValueError):
    pass


class DimensionMismatch(AlignflowError, ValueError):
    pass


class ExtrapolationError(NumericalError):
    """Evaluation point outside the sampled support of a reference solution."""


class MonotonicityError(NumericalError):
    """Characteristic map fails to be strictly increasing."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness
