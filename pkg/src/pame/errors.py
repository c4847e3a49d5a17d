"""Exception hierarchy shared by all modules."""


class PameError(Exception):
    """Base class for every error raised by this package."""


class InvalidDimension(PameError, ValueError):
    pass


class NotConnected(PameError):
    pass


class BipartiteOrDisconnected(PameError):
    pass


class NotSymmetric(PameError, ValueError):
    pass


class NotStochastic(PameError, ValueError):
    pass


class InvalidSize(PameError, ValueError):
    pass


class DimensionMismatch(PameError, ValueError):
    pass


class DuplicateSender(PameError, ValueError):
    pass


class EmptyBatch(PameError, ValueError):
    pass


class InvalidTopology(PameError, ValueError):
    pass


class NonFiniteValue(PameError, ArithmeticError):
    pass


class TooFewPoints(PameError, ValueError):
    pass


class ConfigError(PameError, ValueError):
    pass


class UnknownOracle(PameError, ValueError):
    pass
