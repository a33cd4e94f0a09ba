"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes; library callers can catch the base
class or the specific subclass they care about.
"""


class EnergyAuditError(Exception):
    """Base class for all errors raised by this package."""


class LoadError(EnergyAuditError):
    """A fixture or snapshot root could not be loaded."""


class InputError(EnergyAuditError, ValueError):
    """Malformed or out-of-range input data."""


class ParseError(InputError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class OrderingError(InputError):
    """Timestamps are not strictly increasing."""


class CoverageError(InputError):
    """Requested window is not covered by the available samples."""


class InsufficientDataError(InputError):
    pass


class AlignmentError(InputError):
    pass


class TruncationError(InputError):
    """Binary blob length does not match the record layout."""


class DomainError(InputError):
    pass


class AccountingError(InputError):
    """Scheduler or share accounting is internally inconsistent."""


class UndefinedFractionError(InputError):
    """CPU fraction requested over a window with zero total ticks."""


class UndefinedMetricError(InputError):
    """EpG or OOI requested with a zero or negative denominator."""


class ProcessGoneError(EnergyAuditError):
    pass


class CapabilityGapError(EnergyAuditError):
    """The platform lacks an interface required for the requested operation."""
