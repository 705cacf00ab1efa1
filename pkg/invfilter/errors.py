class DimensionError(ValueError):
    pass


class AlgebraPatternError(ValueError):
    pass


class MembershipError(ValueError):
    pass


class CovarianceError(ValueError):
    pass


class GainError(ValueError):
    pass


class FingerprintMismatchError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


class LogBranchError(NumericalError):
    pass


class SingularInnovationError(NumericalError):
    pass


class CovarianceDriftError(NumericalError):
    pass
