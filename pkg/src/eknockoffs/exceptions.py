"""Exception hierarchy shared by every module in the package."""


class KnockoffError(ValueError):
    """Base class for all errors raised by eknockoffs."""


class NotPositiveDefinite(KnockoffError):
    pass


class NonSymmetric(KnockoffError):
    pass


class DegenerateCovariance(KnockoffError):
    pass


class DimensionMismatch(KnockoffError):
    pass


class TooFewRows(KnockoffError):
    pass


class RankDeficientX(KnockoffError):
    pass


class NonFinite(KnockoffError, ArithmeticError):
    pass


class OffsetTooSmall(KnockoffError):
    pass


class DegenerateConditional(KnockoffError):
    pass


class NonPositiveWeight(KnockoffError):
    pass


class InvalidOrdering(KnockoffError):
    pass


class EnvDimensionMismatch(KnockoffError):
    pass


class ConfigInvalid(KnockoffError):
    pass


class FileUnreadable(KnockoffError, OSError):
    pass


class ResponseMissing(KnockoffError):
    pass


class EmptyAfterCleaning(KnockoffError):
    pass
