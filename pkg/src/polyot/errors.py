"""Exception hierarchy shared by all modules."""


class PolyotError(Exception):
    """Base class for library errors."""


class InvalidInputError(PolyotError, ValueError):
    pass


class DegenerateDirectionError(PolyotError, ValueError):
    pass


class NoCommonFaceError(PolyotError):
    """Directions do not lie in a common extremal cone."""


class EmptyConeError(PolyotError):
    pass


class EmptyIntervalError(PolyotError):
    pass


class EmptyMeasureError(PolyotError, ValueError):
    pass


class InfeasibleError(PolyotError):
    """No transport plan of finite cost exists."""


class NotOptimalError(PolyotError):
    """A negative (Gamma, c)-cycle was found: the carriage is not cyclically monotone."""


class StalePotentialError(PolyotError):
    pass


class InternalConsistencyError(PolyotError):
    pass


class UncoveredCellError(PolyotError):
    pass


class DegenerateProjectionError(PolyotError):
    pass


class InsufficientDataError(PolyotError):
    pass
