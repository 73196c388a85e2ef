"""Exception hierarchy shared by every module."""


class PrismError(Exception):
    """Base class for all errors raised by prism_ood."""


class DimensionError(PrismError, ValueError):
    pass


class NonFiniteError(PrismError, ValueError):
    pass


class SingularMatrixError(PrismError, ArithmeticError):
    pass


class NeumannGuardError(PrismError, ArithmeticError):
    """The truncated Neumann series is not guaranteed to converge for this matrix.

    Callers are expected to fall back to :func:`prism_ood.numerics.exact_inverse`.
    """


class DegenerateBasisError(PrismError, ArithmeticError):
    pass


class DegenerateInputError(PrismError, ValueError):
    pass


class DegenerateFeatureError(PrismError, ValueError):
    pass


class NumericalInstabilityError(PrismError, ArithmeticError):
    def __init__(self, group, message=None):
        self.group = group
        super().__init__(message or f"non-finite gradient in parameter group {group!r}")


class DivergenceError(PrismError, ArithmeticError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class InfeasibleConfigError(PrismError, ValueError):
    pass


class FormatError(PrismError, ValueError):
    pass


class LengthError(FormatError):
    pass


class VersionError(FormatError):
    pass


class ConfigError(PrismError, ValueError):
    pass
