"""Exception hierarchy shared across the package."""


class SafeGainError(Exception):
    """Base class for all package errors."""


class NonFiniteState(SafeGainError):
    pass


class AttitudeSingular(SafeGainError):
    pass


class ThrustSingular(SafeGainError):
    pass


class IllConditioned(SafeGainError):
    pass


class NotHurwitz(SafeGainError):
    pass


class InternalDisagreement(SafeGainError):
    """Two independent computations that must agree did not."""


class EmptyTable(SafeGainError):
    pass


class EpisodeFinished(SafeGainError):
    pass


class TableMismatch(SafeGainError):
    """A checkpoint was produced against a different gain table."""


class ConfigError(SafeGainError):
    pass
