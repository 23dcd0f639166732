"""Exception hierarchy. Every error raised on purpose derives from AttbootError."""


class AttbootError(Exception):
    """Base class; the CLI turns these into machine-readable error JSON."""


class DataError(AttbootError, ValueError):
    pass


class MatchingError(AttbootError):
    pass


class CommonSupportError(MatchingError):
    """No treated unit has a control within the caliper."""


class BootstrapError(AttbootError):
    pass


class CalibrationError(AttbootError):
    pass
